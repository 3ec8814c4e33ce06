// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mamfusion/nn.hpp"

namespace mamfusion {

struct TextEncoderConfig {
  std::size_t d_text = 1024;
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t ffn_width = 256;
  std::size_t max_words = 64;
};

struct TextRepr {
  Tensor words;   // Q, N x d contextual word features
  Tensor pooled;  // q, 1 x d sentence vector
  Tensor alpha;   // 1 x N pooling weights
  AttentionOutput self_attention;
};

// Word features -> FC+ReLU -> + positional embedding -> one transformer
// layer -> attention pooling.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(ParameterRegistry& reg, const std::string& name, const TextEncoderConfig& config);

  TextRepr encode(const Tensor& word_feats) const;

  const TextEncoderConfig& config() const { return config_; }

  Linear fc;
  Tensor pos_emb;  // max_words x d, zero-initialized
  TransformerLayer layer;
  Tensor pool_w;   // 1 x d

 private:
  TextEncoderConfig config_;
};

}  // namespace mamfusion
