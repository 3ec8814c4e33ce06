// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mamfusion/fusion.hpp"
#include "mamfusion/tensor.hpp"

namespace mamfusion {

struct SimilarityWeights {
  double clip = 0.5;
  double video = 0.5;

  void validate() const;
};

// Differentiable clip-level (max over clips) and video-level cosine scores.
struct PairScores {
  Tensor clip;   // 1 x 1
  Tensor video;  // 1 x 1
};

PairScores pair_scores(const Tensor& text_vec, const VideoRepr& video);

struct Similarity {
  double score = 0.0;
  double clip = 0.0;
  double video = 0.0;
  // A zero-norm vector took part; its cosine contributed 0.
  bool zero_norm = false;
};

// s = w_clip * max_i cos(q', V_c[i]) + w_vid * cos(q', V_v).
Similarity pair_similarity(const Tensor& text_vec, const VideoRepr& video, const SimilarityWeights& weights);
inline Similarity pair_similarity(const FusedPair& fused, const VideoRepr& video,
                                  const SimilarityWeights& weights) {
  return pair_similarity(fused.pooled, video, weights);
}

struct RankedVideo {
  std::string video_id;
  double score = 0.0;
};

struct RetrievalResult {
  std::string query_id;
  std::string target_id;
  std::vector<RankedVideo> ranking;  // non-increasing score, ties by ascending id

  // 1-based position of the target, or 0 when it is absent.
  std::size_t target_rank() const;
};

// Sorts by descending score, ties broken by ascending id.
std::vector<RankedVideo> rank_scores(std::vector<RankedVideo> scored);

// Percentage of results whose target sits in the first min(K, corpus) entries.
double recall_at_k(const std::vector<RetrievalResult>& results, std::size_t k);

struct MetricsReport {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double r100 = 0.0;
  double sum_r = 0.0;
  std::size_t queries = 0;
};

double sum_r(const MetricsReport& report);
MetricsReport compute_metrics(const std::vector<RetrievalResult>& results);

// key=value lines, one metric per line, fixed formatting.
std::string format_report(const MetricsReport& report);

}  // namespace mamfusion
