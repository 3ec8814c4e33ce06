// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/fusion.hpp"

namespace mamfusion {

Fusion::Fusion(ParameterRegistry& reg, const std::string& name, std::size_t d, std::size_t heads)
    : ttv_attn(reg, name + ".ttv", d, heads), tvt_attn(reg, name + ".tvt", d, heads) {}

AttentionOutput Fusion::ttv(const Tensor& video_frames, const Tensor& sentence) const {
  return ttv_attn.forward(video_frames, sentence, sentence);
}

AttentionOutput Fusion::tvt(const Tensor& words, const Tensor& fused_video) const {
  return tvt_attn.forward(words, fused_video, fused_video);
}

FusedPair Fusion::fuse(const TextRepr& text, const VideoRepr& video, const Tensor& text_pool_w,
                       const FusionOptions& options) const {
  FusedPair pair;
  pair.video = video.mamba;
  if (options.text_to_video) {
    AttentionOutput a = ttv(video.mamba, text.pooled);
    pair.video = add(video.mamba, a.out);
    pair.ttv_weights = a.weights();
  }
  if (options.video_to_text) {
    AttentionOutput a = tvt(text.words, pair.video);
    pair.words = add(text.words, a.out);
    pair.tvt_weights = a.weights();
    pair.pooled = attention_pool(pair.words, text_pool_w).vec;
  } else {
    // Q' = Q, so q' is the encoder's own pooled vector.
    pair.words = text.words;
    pair.pooled = text.pooled;
  }
  return pair;
}

}  // namespace mamfusion
