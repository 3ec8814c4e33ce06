// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mamfusion/config.hpp"
#include "mamfusion/data_io.hpp"
#include "mamfusion/errors.hpp"

namespace mamfusion {

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  KeyValueReader r(parse_key_values(text));
  r.read("d", m.d);
  r.read("heads", m.heads);
  r.read("ffn_mult", m.ffn_mult);
  r.read("d_text", m.d_text);
  r.read("d_vid", m.d_vid);
  r.read("max_words", m.max_words);
  r.read("max_frames", m.max_frames);
  r.read("num_clips", m.num_clips);
  r.read("gaussian_layers", m.gaussian_layers);
  r.read("variances", m.variances);
  r.read("d_state", m.d_state);
  r.read("d_conv", m.d_conv);
  r.read("expand", m.expand);
  r.read("scan_chunk", m.scan_chunk);
  r.read("w_clip", m.similarity.clip);
  r.read("w_vid", m.similarity.video);
  r.read("lr", t.lr);
  r.read("margin", t.margin);
  r.read("temperature", t.temperature);
  r.read("lambda_triplet", t.lambda_triplet);
  r.read("lambda_infonce", t.lambda_infonce);
  r.read("grad_clip", t.grad_clip);
  r.read("batch_size", t.batch_size);
  r.read("epochs", t.epochs);
  r.read("seed", t.seed);
  r.read("fast_mode", t.forward.fast_mode);
  r.read("enable_mamba", t.forward.mamba);
  r.read("enable_ttv", t.forward.ttv);
  r.read("enable_tvt", t.forward.tvt);
  r.read("checkpoint_every", c.checkpoint_every);
  r.read("data", c.data);
  r.finish();
  m.validate();
  t.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text_file(path)); }

std::string format_run_config(const RunConfig& c) {
  const ModelConfig& m = c.model;
  const TrainConfig& t = c.train;
  std::ostringstream o;
  o.precision(17);
  o << "d = " << m.d << "\nheads = " << m.heads << "\nffn_mult = " << m.ffn_mult << "\nd_text = " << m.d_text
    << "\nd_vid = " << m.d_vid << "\nmax_words = " << m.max_words << "\nmax_frames = " << m.max_frames
    << "\nnum_clips = " << m.num_clips << "\ngaussian_layers = " << m.gaussian_layers
    << "\nvariances = " << format_double_list(m.variances) << "\nd_state = " << m.d_state
    << "\nd_conv = " << m.d_conv << "\nexpand = " << m.expand << "\nscan_chunk = " << m.scan_chunk
    << "\nw_clip = " << m.similarity.clip << "\nw_vid = " << m.similarity.video << "\nlr = " << t.lr
    << "\nmargin = " << t.margin << "\ntemperature = " << t.temperature
    << "\nlambda_triplet = " << t.lambda_triplet << "\nlambda_infonce = " << t.lambda_infonce
    << "\ngrad_clip = " << t.grad_clip << "\nbatch_size = " << t.batch_size << "\nepochs = " << t.epochs
    << "\nseed = " << t.seed << "\nfast_mode = " << (t.forward.fast_mode ? "true" : "false")
    << "\nenable_mamba = " << (t.forward.mamba ? "true" : "false")
    << "\nenable_ttv = " << (t.forward.ttv ? "true" : "false")
    << "\nenable_tvt = " << (t.forward.tvt ? "true" : "false") << "\ncheckpoint_every = " << c.checkpoint_every
    << '\n';
  if (!c.data.empty()) o << "data = " << c.data << '\n';
  return o.str();
}

namespace {

// Mean over the leading (head) axis of a heads x R x C tensor.
Tensor head_average(const Tensor& weights) {
  const std::size_t heads = weights.shape()[0], r = weights.shape()[1], c = weights.shape()[2];
  std::vector<double> out(r * c, 0.0);
  const auto& w = weights.data();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < r * c; ++i) out[i] += w[h * r * c + i];
  for (double& v : out) v /= static_cast<double>(heads);
  return Tensor::from({r, c}, std::move(out));
}

}  // namespace

Heatmap attention_heatmap(const FusedPair& fused) {
  Heatmap h;
  if (fused.tvt_weights.defined()) h.tvt = head_average(fused.tvt_weights);
  if (fused.ttv_weights.defined()) h.ttv = head_average(fused.ttv_weights);
  return h;
}

std::string heatmap_csv(const Tensor& map) {
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < map.rows(); ++i) {
    for (std::size_t j = 0; j < map.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%s%.17g", j ? "," : "", map.at(i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Tensor parse_heatmap_csv(const std::string& text) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t n = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::strtod(cell.c_str(), nullptr));
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw DataError("heatmap CSV: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0) throw DataError("heatmap CSV: empty");
  return Tensor::from({rows, cols}, std::move(values));
}

std::vector<std::uint8_t> heatmap_pgm(const Tensor& map) {
  const std::size_t r = map.rows(), c = map.cols();
  const std::string header = "P5\n" + std::to_string(c) + " " + std::to_string(r) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::size_t i = 0; i < r; ++i) {
    double mx = 0.0;
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, map.at(i, j));
    for (std::size_t j = 0; j < c; ++j) {
      const double v = mx > 0.0 ? 255.0 * map.at(i, j) / mx : 0.0;
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))));
    }
  }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

void apply_disables(ForwardOptions& options, const std::vector<std::string>& disabled) {
  for (const std::string& what : disabled) {
    if (what == "mamba") options.mamba = false;
    if (what == "ttv") options.ttv = false;
    if (what == "tvt") options.tvt = false;
  }
}

std::string variant_name(const ForwardOptions& o) {
  if (o.fast_mode) return o.mamba ? "fast" : "fast-no-mamba";
  std::string name;
  if (!o.mamba) name += "no-mamba-";
  if (!o.ttv) name += "no-ttv-";
  if (!o.tvt) name += "no-tvt-";
  if (name.empty()) return "full";
  name.pop_back();
  return name;
}

std::string resolve_data(const std::string& flag, const RunConfig& config) {
  if (!flag.empty()) return flag;
  if (!config.data.empty()) return config.data;
  throw CLI::RequiredError("--data");
}

int run_synth(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
  const SyntheticSpec spec = read_synthetic_spec(spec_path);
  const Manifest m = generate_synthetic(spec, out_dir);
  std::size_t captions = 0;
  for (const auto& v : m.videos) captions += v.captions.size();
  out << "videos=" << m.videos.size() << "\ncaptions=" << captions << "\nmanifest="
      << (std::filesystem::path(out_dir) / "manifest.jsonl").string() << '\n';
  return kExitOk;
}

int run_train(const RunConfig& config, const std::string& data, const std::string& out_dir, std::ostream& out) {
  const Corpus corpus = load_corpus(read_manifest(data));
  MamFusionModel model(config.model, config.train.seed);
  Trainer trainer(model, config.train);
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_file(dir / "run.cfg", format_run_config(config));
  char buf[96];
  try {
    for (std::size_t e = 0; e < config.train.epochs; ++e) {
      const double loss = trainer.train_epoch(corpus);
      std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.6f\n", trainer.epochs_done(), loss);
      out << buf;
      if (config.checkpoint_every && trainer.epochs_done() % config.checkpoint_every == 0) {
        std::snprintf(buf, sizeof buf, "checkpoint_epoch%04zu.bin", trainer.epochs_done());
        save_checkpoint(model.registry(), dir / buf);
      }
    }
  } catch (const NumericError&) {
    write_loss_csv(dir / "loss.csv", trainer.trace());
    throw;
  }
  write_loss_csv(dir / "loss.csv", trainer.trace());
  save_checkpoint(model.registry(), dir / "checkpoint.bin");
  out << "checkpoint=" << (dir / "checkpoint.bin").string() << '\n';
  return kExitOk;
}

int run_eval(const RunConfig& config, const std::string& data, const std::string& checkpoint,
             const ForwardOptions& options, const std::string& report_path, std::ostream& out) {
  const Corpus corpus = load_corpus(read_manifest(data));
  MamFusionModel model(config.model, config.train.seed);
  load_checkpoint(model.registry(), checkpoint);
  const Evaluation ev = evaluate(model, corpus, options);
  const std::string report = "variant=" + variant_name(options) + "\n" + format_report(ev.metrics);
  out << report;
  const std::string path = report_path.empty() ? checkpoint + "." + variant_name(options) + ".report" : report_path;
  write_file(path, report);
  return kExitOk;
}

int run_heatmap(const RunConfig& config, const std::string& data, const std::string& checkpoint,
                const ForwardOptions& options, const std::string& query, const std::string& video,
                const std::string& out_path, std::ostream& out) {
  const Corpus corpus = load_corpus(read_manifest(data));
  const CaptionItem* caption = corpus.find_caption(query);
  if (!caption) throw DataError("unknown caption id '" + query + "'");
  const VideoItem* target = corpus.find_video(video);
  if (!target) throw DataError("unknown video id '" + video + "'");
  MamFusionModel model(config.model, config.train.seed);
  load_checkpoint(model.registry(), checkpoint);

  NoGradGuard no_grad;
  ForwardOptions fused_options = options;
  fused_options.fast_mode = false;
  const FusedPair fused =
      model.fuse(model.encode_text(caption->words), model.encode_video(target->frames, fused_options), fused_options);
  const Heatmap map = attention_heatmap(fused);
  if (!map.tvt.defined()) throw DataError("heatmap needs the video-to-text fusion enabled");

  std::filesystem::path base(out_path);
  std::filesystem::path stem = base;
  stem.replace_extension();
  write_file(base, heatmap_csv(map.tvt));
  const auto pgm = heatmap_pgm(map.tvt);
  write_file(stem.string() + ".pgm", std::string(pgm.begin(), pgm.end()));
  out << "tvt_csv=" << base.string() << "\npgm=" << stem.string() << ".pgm\n";
  if (map.ttv.defined()) {
    write_file(stem.string() + ".ttv.csv", heatmap_csv(map.ttv));
    out << "ttv_csv=" << stem.string() << ".ttv.csv\n";
  }
  out << "rows=" << map.tvt.rows() << "\ncols=" << map.tvt.cols() << '\n';
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Partially relevant video retrieval with selective state-space fusion"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic partially-relevant corpus");
  synth->add_option("--spec", spec_path, "key=value corpus description")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  std::string config_path, data_path, train_out;
  std::uint64_t seed = 0;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoints and loss.csv");
  train->add_option("--config", config_path)->required();
  train->add_option("--data", data_path, "corpus manifest");
  train->add_option("--out", train_out)->required();
  auto* seed_opt = train->add_option("--seed", seed, "overrides the configured seed");

  std::string checkpoint, report_path;
  bool fast_mode = false;
  std::vector<std::string> disabled;
  auto* eval = app.add_subcommand("eval", "Evaluate R@K and SumR");
  eval->add_option("--config", config_path)->required();
  eval->add_option("--data", data_path);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_flag("--fast-mode", fast_mode, "score with unfused sentence vectors");
  eval->add_option("--disable", disabled, "mamba, ttv or tvt; repeatable")
      ->check(CLI::IsMember({"mamba", "ttv", "tvt"}))
      ->allow_extra_args(false);
  eval->add_option("--report", report_path);

  std::string query, video, heat_out;
  std::vector<std::string> heat_disabled;
  auto* heatmap = app.add_subcommand("heatmap", "Export TVT/TTV attention maps");
  heatmap->add_option("--config", config_path)->required();
  heatmap->add_option("--data", data_path);
  heatmap->add_option("--checkpoint", checkpoint)->required();
  heatmap->add_option("--query", query)->required();
  heatmap->add_option("--video", video)->required();
  heatmap->add_option("--out", heat_out)->required();
  heatmap->add_option("--disable", heat_disabled)->check(CLI::IsMember({"mamba", "ttv"}))->allow_extra_args(false);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return run_synth(spec_path, out_dir, out);
    RunConfig config = load_run_config(config_path);
    if (train->parsed()) {
      if (*seed_opt) config.train.seed = seed;
      return run_train(config, resolve_data(data_path, config), train_out, out);
    }
    if (eval->parsed()) {
      ForwardOptions options = config.train.forward;
      options.fast_mode = options.fast_mode || fast_mode;
      apply_disables(options, disabled);
      return run_eval(config, resolve_data(data_path, config), checkpoint, options, report_path, out);
    }
    if (heatmap->parsed()) {
      ForwardOptions options = config.train.forward;
      apply_disables(options, heat_disabled);
      return run_heatmap(config, resolve_data(data_path, config), checkpoint, options, query, video, heat_out, out);
    }
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace mamfusion
