// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/text_encoder.hpp"

#include <cmath>

#include "mamfusion/errors.hpp"

namespace mamfusion {

TextEncoder::TextEncoder(ParameterRegistry& reg, const std::string& name, const TextEncoderConfig& config)
    : config_(config) {
  if (config.max_words == 0) throw ConfigError("max_words must be positive");
  fc = Linear(reg, name + ".fc", config.d_text, config.d);
  pos_emb = reg.zeros(name + ".pos_emb", {config.max_words, config.d});
  layer = TransformerLayer(reg, name + ".layer", config.d, config.heads, config.ffn_width);
  pool_w = reg.uniform(name + ".pool_w", {1, config.d}, 1.0 / std::sqrt(static_cast<double>(config.d)));
}

TextRepr TextEncoder::encode(const Tensor& word_feats) const {
  const std::size_t n = word_feats.rows();
  if (word_feats.cols() != config_.d_text) {
    throw DimensionError("caption features have width " + std::to_string(word_feats.cols()) + ", expected " +
                         std::to_string(config_.d_text));
  }
  if (n > config_.max_words) {
    throw DimensionError("caption has " + std::to_string(n) + " words, limit is " +
                         std::to_string(config_.max_words));
  }
  Tensor h = add(relu(fc.forward(word_feats)), slice_rows(pos_emb, 0, n));
  TextRepr repr;
  repr.words = layer.forward(h, &repr.self_attention);
  PoolResult pooled = attention_pool(repr.words, pool_w);
  repr.pooled = pooled.vec;
  repr.alpha = pooled.alpha;
  return repr;
}

}  // namespace mamfusion
