// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mamfusion/fusion.hpp"
#include "mamfusion/retrieval.hpp"
#include "mamfusion/text_encoder.hpp"
#include "mamfusion/video_encoder.hpp"

namespace mamfusion {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t d_text = 1024;
  std::size_t d_vid = 1024;
  std::size_t max_words = 64;
  std::size_t max_frames = 256;
  std::size_t num_clips = 32;
  std::size_t gaussian_layers = 2;
  std::vector<double> variances{0.5, 1.0, 5.0, kInfiniteVariance};
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  std::size_t scan_chunk = 16;
  SimilarityWeights similarity;

  void validate() const;
  TextEncoderConfig text_config() const;
  VideoEncoderConfig video_config() const;
};

// Forward-time switches; they select the computation, not the parameter set.
struct ForwardOptions {
  bool mamba = true;
  bool ttv = true;
  bool tvt = true;
  bool fast_mode = false;  // score with the unfused sentence vector

  FusionOptions fusion() const { return {ttv && !fast_mode, tvt && !fast_mode}; }
  VideoPathOptions video() const { return {mamba, true}; }
};

struct EncodedVideo {
  std::string id;
  VideoRepr repr;
};

class MamFusionModel {
 public:
  MamFusionModel(const ModelConfig& config, std::uint64_t seed);
  MamFusionModel(const MamFusionModel&) = delete;
  MamFusionModel& operator=(const MamFusionModel&) = delete;

  TextRepr encode_text(const Tensor& word_feats) const { return text_.encode(word_feats); }
  VideoRepr encode_video(const Tensor& frames, const ForwardOptions& options = {}) const {
    return video_.encode(frames, options.video());
  }
  FusedPair fuse(const TextRepr& text, const VideoRepr& video, const ForwardOptions& options = {}) const;
  PairScores score(const TextRepr& text, const VideoRepr& video, const ForwardOptions& options = {}) const;
  Similarity similarity(const TextRepr& text, const VideoRepr& video, const ForwardOptions& options = {}) const;

  const ModelConfig& config() const { return config_; }
  ParameterRegistry& registry() { return registry_; }
  const ParameterRegistry& registry() const { return registry_; }
  const TextEncoder& text_encoder() const { return text_; }
  const VideoEncoder& video_encoder() const { return video_; }
  const Fusion& fusion() const { return fusion_; }

 private:
  ModelConfig config_;
  ParameterRegistry registry_;
  TextEncoder text_;
  VideoEncoder video_;
  Fusion fusion_;
};

// Scores one query against every video and ranks the corpus.
RetrievalResult rank(const MamFusionModel& model, const std::string& query_id, const std::string& target_id,
                     const TextRepr& query, const std::vector<EncodedVideo>& corpus,
                     const ForwardOptions& options = {});

}  // namespace mamfusion
