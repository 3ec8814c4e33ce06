// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/model.hpp"

#include "mamfusion/errors.hpp"

namespace mamfusion {

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) throw ConfigError("d must be a positive multiple of heads");
  if (ffn_mult == 0 || d_text == 0 || d_vid == 0) throw ConfigError("feature widths must be positive");
  if (max_words == 0 || max_frames == 0 || num_clips == 0) throw ConfigError("sequence limits must be positive");
  GaussianBlockConfig g{variances, heads, d, ffn_mult * d};
  g.validate();
  SsmConfig s;
  s.d = d;
  s.d_state = d_state;
  s.d_conv = d_conv;
  s.expand = expand;
  s.scan_chunk = scan_chunk;
  s.validate();
  similarity.validate();
}

TextEncoderConfig ModelConfig::text_config() const { return {d_text, d, heads, ffn_mult * d, max_words}; }

VideoEncoderConfig ModelConfig::video_config() const {
  VideoEncoderConfig v;
  v.d_vid = d_vid;
  v.d = d;
  v.num_clips = num_clips;
  v.max_frames = max_frames;
  v.gaussian_layers = gaussian_layers;
  v.gaussian = {variances, heads, d, ffn_mult * d};
  v.ssm.d = d;
  v.ssm.d_state = d_state;
  v.ssm.d_conv = d_conv;
  v.ssm.expand = expand;
  v.ssm.scan_chunk = scan_chunk;
  return v;
}

MamFusionModel::MamFusionModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), registry_(seed) {
  config_.validate();
  text_ = TextEncoder(registry_, "text", config_.text_config());
  video_ = VideoEncoder(registry_, "video", config_.video_config());
  fusion_ = Fusion(registry_, "fusion", config_.d, config_.heads);
}

FusedPair MamFusionModel::fuse(const TextRepr& text, const VideoRepr& video, const ForwardOptions& options) const {
  return fusion_.fuse(text, video, text_.pool_w, options.fusion());
}

PairScores MamFusionModel::score(const TextRepr& text, const VideoRepr& video, const ForwardOptions& options) const {
  const FusionOptions f = options.fusion();
  if (!f.text_to_video && !f.video_to_text) return pair_scores(text.pooled, video);
  return pair_scores(fuse(text, video, options).pooled, video);
}

Similarity MamFusionModel::similarity(const TextRepr& text, const VideoRepr& video,
                                      const ForwardOptions& options) const {
  NoGradGuard no_grad;
  const FusionOptions f = options.fusion();
  if (!f.text_to_video && !f.video_to_text) return pair_similarity(text.pooled, video, config_.similarity);
  return pair_similarity(fuse(text, video, options).pooled, video, config_.similarity);
}

RetrievalResult rank(const MamFusionModel& model, const std::string& query_id, const std::string& target_id,
                     const TextRepr& query, const std::vector<EncodedVideo>& corpus, const ForwardOptions& options) {
  if (corpus.empty()) throw DataError("rank: empty video corpus");
  std::vector<RankedVideo> scored;
  scored.reserve(corpus.size());
  for (const EncodedVideo& v : corpus) scored.push_back({v.id, model.similarity(query, v.repr, options).score});
  return {query_id, target_id, rank_scores(std::move(scored))};
}

}  // namespace mamfusion
