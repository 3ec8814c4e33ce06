// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mamfusion/errors.hpp"
#include "mamfusion/ops.hpp"

namespace mamfusion {

namespace {

constexpr double kNormEps = 1e-8;

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void SimilarityWeights::validate() const {
  if (clip < 0.0 || video < 0.0 || std::abs(clip + video - 1.0) > 1e-9) {
    throw ConfigError("similarity weights must be nonnegative and sum to 1");
  }
}

PairScores pair_scores(const Tensor& text_vec, const VideoRepr& video) {
  return {max_cols(cosine_rows(text_vec, video.clips, kNormEps)),
          cosine_rows(text_vec, video.pooled, kNormEps)};
}

Similarity pair_similarity(const Tensor& text_vec, const VideoRepr& video, const SimilarityWeights& weights) {
  NoGradGuard no_grad;
  Similarity s;
  PairScores p = pair_scores(text_vec, video);
  s.clip = p.clip.item();
  s.video = p.video.item();
  s.score = weights.clip * s.clip + weights.video * s.video;

  if (norm_of(text_vec.data()) <= kNormEps || norm_of(video.pooled.data()) <= kNormEps) s.zero_norm = true;
  const std::size_t d = video.clips.cols();
  for (std::size_t i = 0; i < video.clips.rows() && !s.zero_norm; ++i) {
    if (norm_of(video.clips.data().subspan(i * d, d)) <= kNormEps) s.zero_norm = true;
  }
  return s;
}

std::size_t RetrievalResult::target_rank() const {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].video_id == target_id) return i + 1;
  return 0;
}

std::vector<RankedVideo> rank_scores(std::vector<RankedVideo> scored) {
  std::sort(scored.begin(), scored.end(), [](const RankedVideo& a, const RankedVideo& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.video_id < b.video_id;
  });
  return scored;
}

double recall_at_k(const std::vector<RetrievalResult>& results, std::size_t k) {
  if (k == 0) throw ConfigError("recall_at_k: K must be at least 1");
  if (results.empty()) throw DataError("recall_at_k: no results");
  std::size_t hits = 0;
  for (const RetrievalResult& r : results) {
    const std::size_t rank = r.target_rank();
    if (rank != 0 && rank <= std::min(k, r.ranking.size())) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

double sum_r(const MetricsReport& report) { return report.r1 + report.r5 + report.r10 + report.r100; }

MetricsReport compute_metrics(const std::vector<RetrievalResult>& results) {
  MetricsReport m;
  m.r1 = recall_at_k(results, 1);
  m.r5 = recall_at_k(results, 5);
  m.r10 = recall_at_k(results, 10);
  m.r100 = recall_at_k(results, 100);
  m.sum_r = sum_r(m);
  m.queries = results.size();
  return m;
}

std::string format_report(const MetricsReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "queries=%zu\nr1=%.4f\nr5=%.4f\nr10=%.4f\nr100=%.4f\nsum_r=%.4f\n",
                report.queries, report.r1, report.r5, report.r10, report.r100, report.sum_r);
  return buf;
}

}  // namespace mamfusion
