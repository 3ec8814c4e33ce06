// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "mamfusion/cli.hpp"
#include "mamfusion/gmmformer.hpp"
#include "mamfusion/ssm.hpp"
#include "mamfusion/training.hpp"

using namespace mamfusion;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool blocking = true;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- scan oracle

Outcome scan_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.001, 0.5), neg(0.1, 8.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t l = 1 + rng() % 256, di = 1 + rng() % 32, n = 1 + rng() % 16;
    std::vector<double> delta(l * di), a(di * n), b(l * n), c(l * n), x(l * di), d(di);
    for (auto& v : delta) v = pos(rng);
    for (auto& v : a) v = -neg(rng);
    for (auto& v : b) v = u(rng);
    for (auto& v : c) v = u(rng);
    for (auto& v : x) v = u(rng);
    for (auto& v : d) v = u(rng);
    const ScanInputs in{l, di, n, delta, a, b, c, x, d};
    const auto ref = selective_scan_reference(in);
    const std::size_t chunk = 1 + rng() % 64, workers = 1 + rng() % 4;
    const auto got = selective_scan_chunked(in, chunk, nullptr, workers);
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      diff = std::max(diff, std::abs(got[k] - ref[k]));
      scale = std::max(scale, std::abs(ref[k]));
    }
    worst = std::max(worst, scale > 0 ? diff / scale : diff);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0, "100 instances, max rel err " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

// ------------------------------------------------------------- gradient suite

ModelConfig toy_model() {
  ModelConfig c;
  c.d = 8;
  c.heads = 2;
  c.d_text = 6;
  c.d_vid = 6;
  c.max_words = 8;
  c.max_frames = 8;
  c.num_clips = 3;
  c.d_state = 4;
  c.scan_chunk = 4;
  return c;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  SyntheticSpec spec;
  spec.n_videos = 2;
  spec.frames_min = 5;
  spec.frames_max = 6;
  spec.caption_len_min = 3;
  spec.caption_len_max = 4;
  spec.d_vid = spec.d_text = 6;
  spec.latent_dim = 4;
  spec.seed = 11;
  const Corpus corpus = synthesize_corpus(spec);
  MamFusionModel model(toy_model(), 12);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.margin = 3.0;  // every hinge stays active
  cfg.temperature = 0.5;
  Trainer trainer(model, cfg);
  const std::vector<std::size_t> batch{0, 1};
  auto checks = testutil::finite_difference_check([&] { return trainer.batch_loss(corpus, batch); },
                                                  testutil::registry_leaves(model.registry()), 1e-4);
  std::map<std::string, double> per_module;
  std::size_t zero = 0;
  std::string worst_name;
  double worst = 0.0;
  for (const auto& c : checks) {
    const std::string module = c.name.substr(0, c.name.find('.', c.name.find('.') + 1));
    per_module[module] = std::max(per_module[module], c.rel_error);
    if (c.analytic_norm == 0.0) ++zero;
    if (c.rel_error >= worst) worst = c.rel_error, worst_name = c.name;
  }
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(checks.size()) + " tensors";
  for (const auto& [m, e] : per_module) detail += ", " + m + " " + fmt("%.2g", e);
  detail += ", worst " + worst_name + " " + fmt("%.3g", worst) + ", " + std::to_string(zero) + " zero-gradient tensors, " +
            fmt("%.1f", secs) + " s";
  return {worst < 1e-3 && secs < 120.0, detail};
}

// -------------------------------------------------------------- simplex suite

double simplex_violation(const Tensor& w) {
  const std::size_t width = w.shape().back();
  double worst = 0.0;
  for (std::size_t off = 0; off < w.numel(); off += width) {
    double s = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      s += w[off + i];
      if (w[off + i] < 0.0) worst = std::max(worst, -w[off + i]);
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Outcome simplex_suite() {
  ModelConfig cfg = toy_model();
  cfg.max_frames = 24;
  cfg.max_words = 12;
  MamFusionModel model(cfg, 13);
  std::mt19937_64 rng(14);
  double worst = 0.0;
  std::size_t rows_checked = 0;
  auto check = [&](const Tensor& w) {
    worst = std::max(worst, simplex_violation(w));
    rows_checked += w.numel() / w.shape().back();
  };
  NoGradGuard ng;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 1 + rng() % 12, mf = 1 + rng() % 24;
    TextRepr t = model.encode_text(testutil::random_tensor(rng, {n, 6}, -3, 3));
    VideoRepr v = model.encode_video(testutil::random_tensor(rng, {mf, 6}, -3, 3));
    FusedPair p = model.fuse(t, v);
    check(t.alpha);
    check(t.self_attention.weights());
    check(v.alpha);
    for (const Tensor& w : v.clip_attention) check(w);
    for (const Tensor& w : v.frame_attention) check(w);
    check(p.ttv_weights);
    check(p.tvt_weights);
    check(attention_pool(p.words, model.text_encoder().pool_w).alpha);
  }
  return {worst < 1e-6, "50 forwards, " + std::to_string(rows_checked) + " rows, max deviation " + fmt("%.3g", worst)};
}

// ------------------------------------------------------- degenerate reductions

Outcome degenerate_reductions() {
  std::mt19937_64 rng(15);
  // Gaussian block with only the infinite variance vs a transformer layer.
  GaussianBlockConfig gcfg;
  gcfg.variances = {kInfiniteVariance};
  gcfg.d = 16;
  gcfg.heads = 4;
  gcfg.ffn_width = 64;
  ParameterRegistry ra(16), rb(16);
  GaussianBlock block(ra, "b", gcfg);
  TransformerLayer layer(rb, "b", 16, 4, 64);
  double gauss = 0.0;
  for (int i = 0; i < 10; ++i) {
    Tensor x = testutil::random_tensor(rng, {1 + rng() % 20, 16});
    gauss = std::max(gauss, testutil::max_abs_diff(block.forward(x).out, layer.forward(x)));
  }

  // Zeroed fusion value projections leave every retrieval score unchanged.
  MamFusionModel model(toy_model(), 17);
  SyntheticSpec spec;
  spec.n_videos = 6;
  spec.frames_min = 4;
  spec.frames_max = 8;
  spec.caption_len_min = 2;
  spec.caption_len_max = 8;
  spec.d_vid = spec.d_text = 6;
  spec.latent_dim = 4;
  const Corpus corpus = synthesize_corpus(spec);
  ForwardOptions unfused;
  unfused.ttv = unfused.tvt = false;
  std::vector<double> before, after;
  for (const auto& c : corpus.captions)
    for (const auto& v : corpus.videos)
      before.push_back(model.similarity(model.encode_text(c.words), model.encode_video(v.frames), unfused).score);
  for (const char* name : {"fusion.ttv.w_v.weight", "fusion.ttv.w_v.bias", "fusion.tvt.w_v.weight", "fusion.tvt.w_v.bias"}) {
    Tensor t = model.registry().find(name)->tensor;
    for (double& v : t.mutable_data()) v = 0.0;
  }
  for (const auto& c : corpus.captions)
    for (const auto& v : corpus.videos)
      after.push_back(model.similarity(model.encode_text(c.words), model.encode_video(v.frames)).score);
  const bool fusion_exact = before == after;

  // out_proj = 0 turns the Mamba block into the identity.
  SsmConfig scfg;
  ParameterRegistry rm(18);
  MambaBlock mamba(rm, "m", scfg);
  for (double& w : mamba.out_proj.weight.mutable_data()) w = 0.0;
  bool mamba_exact = true;
  for (int i = 0; i < 10; ++i) {
    Tensor x = testutil::random_tensor(rng, {1 + rng() % 40, 64});
    mamba_exact = mamba_exact && testutil::bit_equal(mamba.forward(x), x);
  }
  return {gauss < 1e-6 && fusion_exact && mamba_exact,
          "gaussian{inf} vs transformer " + fmt("%.3g", gauss) + ", zero-value fusion scores " +
              (fusion_exact ? "identical" : "differ") + " (" + std::to_string(before.size()) + " pairs), mamba out_proj=0 " +
              (mamba_exact ? "identity" : "not identity")};
}

// -------------------------------------------------------------- metric oracle

Outcome metric_oracle() {
  std::mt19937_64 rng(19);
  std::size_t mismatches = 0;
  for (int set = 0; set < 100; ++set) {
    const std::size_t corpus = 1 + rng() % 100, queries = 1 + rng() % 100;
    std::vector<RetrievalResult> results;
    std::vector<std::size_t> ranks;
    for (std::size_t q = 0; q < queries; ++q) {
      std::vector<RankedVideo> scored;
      for (std::size_t v = 0; v < corpus; ++v) {
        char id[16];
        std::snprintf(id, sizeof id, "vid%03zu", v);
        scored.push_back({id, static_cast<double>(rng() % 20) / 19.0});  // coarse scores force ties
      }
      const RankedVideo target = scored[rng() % corpus];
      // Brute force: videos strictly ahead of the target.
      std::size_t ahead = 0;
      for (const auto& s : scored)
        if (s.score > target.score || (s.score == target.score && s.video_id < target.video_id)) ++ahead;
      ranks.push_back(ahead + 1);
      results.push_back({"q" + std::to_string(q), target.video_id, rank_scores(scored)});
    }
    const MetricsReport m = compute_metrics(results);
    const std::size_t ks[4] = {1, 5, 10, 100};
    double ref[4];
    for (int i = 0; i < 4; ++i) {
      std::size_t hits = 0;
      for (std::size_t r : ranks) hits += r <= ks[i] ? 1 : 0;
      ref[i] = 100.0 * static_cast<double>(hits) / static_cast<double>(queries);
    }
    const double ref_sum = ref[0] + ref[1] + ref[2] + ref[3];
    if (m.r1 != ref[0] || m.r5 != ref[1] || m.r10 != ref[2] || m.r100 != ref[3] || m.sum_r != ref_sum) ++mismatches;
  }
  const double a = sum_r({8.0, 25.4, 37.2, 76.8, 0.0, 0});
  const double b = sum_r({2.0, 8.8, 14.2, 51.5, 0.0, 0});
  const bool arithmetic = std::abs(a - 147.4) < 1e-9 && std::abs(b - 76.5) < 1e-9;
  return {mismatches == 0 && arithmetic, "100 result sets, " + std::to_string(mismatches) + " mismatches; SumR " +
                                             fmt("%.1f", a) + " and " + fmt("%.1f", b)};
}

// ------------------------------------------ memorization, ablation, convergence

ModelConfig memo_model() {
  ModelConfig c;
  c.d = 32;
  c.heads = 4;
  c.d_text = 32;
  c.d_vid = 32;
  c.max_words = 16;
  c.max_frames = 64;
  c.num_clips = 8;
  return c;
}

SyntheticSpec memo_spec() {
  SyntheticSpec s;
  s.n_videos = 32;
  s.frames_min = 16;
  s.frames_max = 24;
  s.d_vid = 32;
  s.d_text = 32;
  s.seed = 7;
  return s;
}

TrainConfig memo_train(const ForwardOptions& forward) {
  TrainConfig t;
  t.lr = 1e-4;
  t.batch_size = 8;
  t.epochs = 200;
  t.seed = 42;
  t.forward = forward;
  return t;
}

struct Run {
  LossTrace trace;
  MetricsReport at30;
  MetricsReport final_metrics;
  double seconds = 0.0;
};

Run train_run(const Corpus& corpus, const ForwardOptions& forward, std::size_t epochs, MamFusionModel& model) {
  const auto t0 = Clock::now();
  Trainer trainer(model, memo_train(forward));
  Run r;
  for (std::size_t e = 1; e <= epochs; ++e) {
    trainer.train_epoch(corpus);
    if (e == 30) r.at30 = evaluate(model, corpus, forward).metrics;
  }
  r.final_metrics = evaluate(model, corpus, forward).metrics;
  r.trace = trainer.trace();
  r.seconds = seconds_since(t0);
  return r;
}

struct Experiments {
  fs::path dir;
  Corpus corpus;
  Run full, no_mamba, no_fusion;
  std::unique_ptr<MamFusionModel> full_model;
};

Outcome memorization(const Experiments& ex) {
  const Run& r = ex.full;
  const double ratio = r.trace.back().mean_loss / r.trace.front().mean_loss;
  const bool ok = r.final_metrics.r1 == 100.0 && ratio < 0.05 && r.trace.size() <= 200 && r.seconds < 300.0;
  return {ok, std::to_string(r.trace.size()) + " epochs, R@1 " + fmt("%.2f", r.final_metrics.r1) + ", SumR " +
                  fmt("%.2f", r.final_metrics.sum_r) + ", final/initial loss " + fmt("%.3g", ratio) + ", " +
                  fmt("%.1f", r.seconds) + " s"};
}

Outcome ablation(const Experiments& ex) {
  const double full = ex.full.at30.sum_r, both = ex.no_fusion.at30.sum_r, mamba = ex.no_mamba.at30.sum_r;
  return {full >= both && full >= mamba, "epoch 30 SumR full " + fmt("%.2f", full) + ", w/o both fusions " +
                                             fmt("%.2f", both) + ", w/o mamba " + fmt("%.2f", mamba)};
}

Outcome convergence(const Experiments& ex) {
  bool ok = true;
  std::string detail;
  std::optional<std::size_t> e95[2];
  int idx = 0;
  for (const auto* run : {&ex.full, &ex.no_mamba}) {
    const fs::path csv = ex.dir / (idx == 0 ? "loss_full.csv" : "loss_no_mamba.csv");
    write_loss_csv(csv, run->trace);
    const LossTrace back = read_loss_csv(csv);
    ok = ok && fs::exists(csv) && back.size() == run->trace.size();
    for (std::size_t i = 1; i < back.size(); ++i) ok = ok && back[i].epoch > back[i - 1].epoch;
    e95[idx++] = epochs_to_reduction(back, 0.95);
  }
  auto show = [](const std::optional<std::size_t>& e) { return e ? std::to_string(*e) : std::string("not reached"); };
  const bool direction = e95[0] && (!e95[1] || *e95[0] <= *e95[1]);
  detail = "CSV strictly epoch-increasing; epochs to 95% reduction: full " + show(e95[0]) + ", w/o mamba " +
           show(e95[1]) + (direction ? " (full <= w/o mamba)" : " (direction violated, non-blocking)");
  return {ok, detail};
}

// ------------------------------------------------------------------ round-trips

Outcome round_trips(const Experiments& ex) {
  std::mt19937_64 rng(20);
  bool features = true;
  for (int i = 0; i < 20; ++i) {
    Tensor m = testutil::random_tensor(rng, {1 + rng() % 40, 1 + rng() % 300}, -1e4, 1e4);
    for (double& v : m.mutable_data()) v = static_cast<float>(v);
    const fs::path p = ex.dir / "rt.mmft";
    write_feature_file(p, m);
    features = features && testutil::bit_equal(read_feature_file(p), m) &&
               fs::file_size(p) == kFeatureHeaderBytes + 4 * m.numel();
  }

  const fs::path ckpt = ex.dir / "memorized.bin";
  save_checkpoint(ex.full_model->registry(), ckpt);
  MamFusionModel restored(memo_model(), 999);
  load_checkpoint(restored.registry(), ckpt);
  bool params = true;
  for (std::size_t i = 0; i < restored.registry().params().size(); ++i)
    params = params && testutil::bit_equal(restored.registry().params()[i].tensor, ex.full_model->registry().params()[i].tensor);
  const bool metrics = format_report(evaluate(restored, ex.corpus).metrics) ==
                       format_report(evaluate(*ex.full_model, ex.corpus).metrics);

  // Heatmap through the command-line path.
  RunConfig rc;
  rc.model = memo_model();
  rc.train = memo_train({});
  {
    std::ofstream(ex.dir / "run.cfg") << format_run_config(rc);
  }
  std::ostringstream out, err;
  const int code = dispatch({"heatmap", "--config", (ex.dir / "run.cfg").string(), "--data",
                             (ex.dir / "corpus/manifest.jsonl").string(), "--checkpoint", ckpt.string(), "--query",
                             "v0005_c0", "--video", "v0005", "--out", (ex.dir / "heat.csv").string()},
                            out, err);
  bool heat = code == kExitOk;
  if (heat) {
    std::ifstream in(ex.dir / "heat.csv");
    std::stringstream s;
    s << in.rdbuf();
    NoGradGuard ng;
    const CaptionItem* c = ex.corpus.find_caption("v0005_c0");
    const Heatmap map = attention_heatmap(
        ex.full_model->fuse(ex.full_model->encode_text(c->words), ex.full_model->encode_video(ex.corpus.find_video("v0005")->frames)));
    heat = testutil::bit_equal(parse_heatmap_csv(s.str()), map.tvt) && simplex_violation(map.tvt) < 1e-6;
  }
  return {features && params && metrics && heat,
          std::string("feature files ") + (features ? "bit-exact" : "MISMATCH") + ", checkpoint " +
              (params && metrics ? "bit-exact with identical report" : "MISMATCH") + ", heatmap CSV " +
              (heat ? "bit-exact" : "MISMATCH: " + err.str())};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    if (!o.pass && o.blocking) ++failures;
  };

  report("scan oracle", scan_oracle);
  report("gradient suite", gradient_suite);
  report("simplex suite", simplex_suite);
  report("degenerate reductions", degenerate_reductions);
  report("metric oracle", metric_oracle);

  Experiments ex;
  ex.dir = fs::temp_directory_path() / "mamfusion_acceptance";
  fs::remove_all(ex.dir);
  fs::create_directories(ex.dir);
  generate_synthetic(memo_spec(), ex.dir / "corpus");
  ex.corpus = load_corpus(read_manifest(ex.dir / "corpus/manifest.jsonl"));
  ex.full_model = std::make_unique<MamFusionModel>(memo_model(), 42);
  ex.full = train_run(ex.corpus, {}, 200, *ex.full_model);
  {
    ForwardOptions o;
    o.mamba = false;
    MamFusionModel m(memo_model(), 42);
    ex.no_mamba = train_run(ex.corpus, o, 200, m);
  }
  {
    ForwardOptions o;
    o.ttv = o.tvt = false;
    MamFusionModel m(memo_model(), 42);
    ex.no_fusion = train_run(ex.corpus, o, 30, m);
  }
  report("memorization", [&] { return memorization(ex); });
  report("ablation direction", [&] { return ablation(ex); });
  report("convergence logging", [&] { return convergence(ex); });
  report("round-trip suite", [&] { return round_trips(ex); });
  fs::remove_all(ex.dir);

  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
