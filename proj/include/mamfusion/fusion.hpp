// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mamfusion/nn.hpp"
#include "mamfusion/text_encoder.hpp"
#include "mamfusion/video_encoder.hpp"

namespace mamfusion {

struct FusionOptions {
  bool text_to_video = true;  // TTV: sentence vector into frame features
  bool video_to_text = true;  // TVT: fused frames into word features
};

struct FusedPair {
  Tensor video;        // V_ft, M_f x d
  Tensor words;        // Q', N x d
  Tensor pooled;       // q', 1 x d
  Tensor ttv_weights;  // heads x M_f x 1 (undefined when TTV is off)
  Tensor tvt_weights;  // heads x N x M_f (undefined when TVT is off)
};

/// Pairwise cross-modal fusion.
///
/// TTV attends from every frame row of V_fm to the sentence vector q and
/// adds the result back (V_ft = V_fm + attn). TVT then attends from every
/// word row of Q to V_ft (Q' = Q + attn). q' pools Q' with the text encoder's
/// pooling vector.
class Fusion {
 public:
  Fusion() = default;
  Fusion(ParameterRegistry& reg, const std::string& name, std::size_t d, std::size_t heads);

  AttentionOutput ttv(const Tensor& video_frames, const Tensor& sentence) const;
  AttentionOutput tvt(const Tensor& words, const Tensor& fused_video) const;
  FusedPair fuse(const TextRepr& text, const VideoRepr& video, const Tensor& text_pool_w,
                 const FusionOptions& options = {}) const;

  MultiHeadAttention ttv_attn;
  MultiHeadAttention tvt_attn;
};

}  // namespace mamfusion
