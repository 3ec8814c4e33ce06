// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "mamfusion/errors.hpp"

namespace mamfusion {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("lr must be nonnegative");
  if (!(margin >= 0.0)) throw ConfigError("margin must be nonnegative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(lambda_triplet >= 0.0) || !(lambda_infonce >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

double triplet_loss(double s_pos, double s_neg, double margin) { return std::max(0.0, margin + s_neg - s_pos); }

namespace {

// Hinge on the hardest off-diagonal entry of every row, summed.
Tensor row_hinges(const Tensor& sim, double margin) {
  const std::size_t b = sim.rows();
  std::vector<Tensor> hinges;
  hinges.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Tensor> negatives;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) negatives.push_back(element(sim, i, j));
    Tensor hardest = max_cols(concat_cols(negatives));
    hinges.push_back(relu(add_scalar(sub(hardest, element(sim, i, i)), margin)));
  }
  return sum(concat_rows(hinges));
}

Tensor identity(std::size_t n) {
  Tensor eye = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) eye.mutable_data()[i * n + i] = 1.0;
  return eye;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(epoch) + 1));
}

}  // namespace

Tensor triplet_loss(const Tensor& sim, double margin) {
  const std::size_t b = sim.rows();
  if (sim.cols() != b) throw DimensionError("triplet_loss: similarity matrix must be square");
  if (b == 1) return Tensor::scalar(0.0);
  Tensor total = add(row_hinges(sim, margin), row_hinges(transpose(sim), margin));
  return scale(total, 1.0 / (2.0 * static_cast<double>(b)));
}

Tensor infonce_loss(const Tensor& sim, double temperature) {
  const std::size_t b = sim.rows();
  if (sim.cols() != b) throw DimensionError("infonce_loss: similarity matrix must be square");
  if (!(temperature > 0.0)) throw ConfigError("infonce_loss: temperature must be positive");
  Tensor logits = scale(sim, 1.0 / temperature);
  const Tensor eye = identity(b);
  Tensor rows = sum(mul(log_softmax_rows(logits), eye));
  Tensor cols = sum(mul(log_softmax_rows(transpose(logits)), eye));
  return scale(add(rows, cols), -1.0 / (2.0 * static_cast<double>(b)));
}

Trainer::Trainer(MamFusionModel& model, TrainConfig config) : model_(model), config_(std::move(config)) {
  config_.validate();
}

std::vector<std::vector<std::size_t>> Trainer::make_batches(const Corpus& corpus, std::size_t epoch) const {
  std::vector<std::size_t> order(corpus.captions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(epoch_seed(config_.seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);

  // Greedy fill; a caption whose video is already in the batch waits for a
  // later one, so in-batch negatives are always true negatives.
  std::vector<std::vector<std::size_t>> batches;
  while (!order.empty()) {
    std::vector<std::size_t> batch, rest;
    std::set<std::size_t> videos;
    for (std::size_t idx : order) {
      const std::size_t v = corpus.captions[idx].video;
      if (batch.size() < config_.batch_size && !videos.count(v)) {
        batch.push_back(idx);
        videos.insert(v);
      } else {
        rest.push_back(idx);
      }
    }
    batches.push_back(std::move(batch));
    order = std::move(rest);
  }
  return batches;
}

Tensor Trainer::batch_loss(const Corpus& corpus, std::span<const std::size_t> captions) const {
  const std::size_t b = captions.size();
  if (b == 0) throw DataError("empty batch");
  const ForwardOptions& opts = config_.forward;
  std::vector<TextRepr> texts;
  std::vector<VideoRepr> videos;
  for (std::size_t idx : captions) {
    const CaptionItem& c = corpus.captions[idx];
    texts.push_back(model_.encode_text(c.words));
    videos.push_back(model_.encode_video(corpus.video_of(c).frames, opts));
  }
  std::vector<Tensor> clip_rows, video_rows;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Tensor> clip_cells, video_cells;
    for (std::size_t j = 0; j < b; ++j) {
      PairScores s = model_.score(texts[i], videos[j], opts);
      clip_cells.push_back(s.clip);
      video_cells.push_back(s.video);
    }
    clip_rows.push_back(concat_cols(clip_cells));
    video_rows.push_back(concat_cols(video_cells));
  }
  const Tensor clip_sim = concat_rows(clip_rows);
  const Tensor video_sim = concat_rows(video_rows);

  Tensor trip = add(triplet_loss(clip_sim, config_.margin), triplet_loss(video_sim, config_.margin));
  Tensor nce = add(infonce_loss(clip_sim, config_.temperature), infonce_loss(video_sim, config_.temperature));
  return add(scale(trip, config_.lambda_triplet), scale(nce, config_.lambda_infonce));
}

double Trainer::train_epoch(const Corpus& corpus) {
  if (corpus.captions.empty()) throw DataError("training corpus has no captions");
  const auto start = std::chrono::steady_clock::now();
  auto& params = model_.registry().params();
  double weighted = 0.0;
  std::size_t count = 0;
  for (const auto& batch : make_batches(corpus, epoch_)) {
    model_.registry().zero_grad();
    Tensor loss = batch_loss(corpus, batch);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch_ + 1));
    backward(loss);
    if (config_.grad_clip > 0.0) clip_grad_norm(params, config_.grad_clip);
    adam_step(params, adam_, {config_.lr});
    weighted += value * static_cast<double>(batch.size());
    count += batch.size();
  }
  const double mean_loss = weighted / static_cast<double>(count);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  ++epoch_;
  trace_.push_back({epoch_, mean_loss, std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count()});
  return mean_loss;
}

double Trainer::evaluation_loss(const Corpus& corpus) const {
  if (corpus.captions.empty()) throw DataError("corpus has no captions");
  NoGradGuard no_grad;
  double weighted = 0.0;
  std::size_t count = 0;
  for (const auto& batch : make_batches(corpus, epoch_)) {
    weighted += batch_loss(corpus, batch).item() * static_cast<double>(batch.size());
    count += batch.size();
  }
  return weighted / static_cast<double>(count);
}

Evaluation evaluate(const MamFusionModel& model, const Corpus& corpus, const ForwardOptions& options) {
  if (corpus.videos.empty() || corpus.captions.empty()) throw DataError("evaluation corpus is empty");
  NoGradGuard no_grad;
  std::vector<EncodedVideo> encoded;
  encoded.reserve(corpus.videos.size());
  for (const VideoItem& v : corpus.videos) encoded.push_back({v.id, model.encode_video(v.frames, options)});
  Evaluation ev;
  ev.results.reserve(corpus.captions.size());
  for (const CaptionItem& c : corpus.captions) {
    ev.results.push_back(rank(model, c.id, corpus.video_of(c).id, model.encode_text(c.words), encoded, options));
  }
  ev.metrics = compute_metrics(ev.results);
  return ev;
}

void write_loss_csv(const std::filesystem::path& path, const LossTrace& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,mean_loss,wall_ms\n";
  char buf[96];
  for (const EpochRecord& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%lld\n", r.epoch, r.mean_loss, static_cast<long long>(r.wall_ms));
    out << buf;
  }
}

LossTrace read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,mean_loss,wall_ms") throw DataError(path.string() + ": bad header");
  LossTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    long long ms = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lld", &r.epoch, &r.mean_loss, &ms) != 3) {
      throw DataError(path.string() + ": malformed row '" + line + "'");
    }
    r.wall_ms = ms;
    trace.push_back(r);
  }
  return trace;
}

std::optional<std::size_t> epochs_to_reduction(const LossTrace& trace, double fraction) {
  if (trace.empty()) return std::nullopt;
  const double target = (1.0 - fraction) * trace.front().mean_loss;
  for (const EpochRecord& r : trace)
    if (r.mean_loss <= target) return r.epoch;
  return std::nullopt;
}

}  // namespace mamfusion
