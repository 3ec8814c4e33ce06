// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/gmmformer.hpp"

#include <cmath>

#include "mamfusion/errors.hpp"

namespace mamfusion {

namespace {

void check_variance(double variance) {
  if (std::isnan(variance) || variance <= 0.0) {
    throw ConfigError("Gaussian variance must be positive or infinite, got " + std::to_string(variance));
  }
}

}  // namespace

void GaussianBlockConfig::validate() const {
  if (variances.empty()) throw ConfigError("at least one Gaussian variance is required");
  for (double v : variances) check_variance(v);
  if (heads == 0 || d % heads != 0) throw ConfigError("width must be divisible by the head count");
  if (ffn_width == 0) throw ConfigError("ffn width must be positive");
}

Tensor gaussian_prior(std::size_t length, double variance) {
  check_variance(variance);
  if (length == 0) throw DimensionError("gaussian_prior: empty sequence");
  if (std::isinf(variance)) return Tensor::full({length, length}, 1.0);
  std::vector<double> g(length * length);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < length; ++j) {
      const double off = static_cast<double>(i) - static_cast<double>(j);
      g[i * length + j] = std::exp(-(off * off) / (2.0 * variance));
    }
  }
  return Tensor::from({length, length}, std::move(g));
}

AttentionOutput gaussian_attention(const MultiHeadAttention& attn, const Tensor& x, double variance) {
  check_variance(variance);
  if (std::isinf(variance)) return attn.forward(x, x, x);
  Tensor prior = gaussian_prior(x.rows(), variance);
  return attn.forward(x, x, x, &prior);
}

GaussianBlock::GaussianBlock(ParameterRegistry& reg, const std::string& name,
                             const GaussianBlockConfig& config)
    : config_(config) {
  config_.validate();
  attn = MultiHeadAttention(reg, name + ".attn", config.d, config.heads);
  ln1 = LayerNorm(reg, name + ".ln1", config.d);
  ffn = FeedForward(reg, name + ".ffn", config.d, config.ffn_width);
  ln2 = LayerNorm(reg, name + ".ln2", config.d);
}

GaussianBlockOutput GaussianBlock::forward(const Tensor& x) const {
  const std::size_t length = x.rows();
  MultiHeadAttention::Projected p = attn.project(x, x, x);
  const std::vector<Tensor> plain = attn.head_weights(p);

  GaussianBlockOutput result;
  Tensor aggregate;
  for (double variance : config_.variances) {
    AttentionOutput branch;
    if (std::isinf(variance)) {
      branch.head_weights = plain;
    } else {
      Tensor prior = gaussian_prior(length, variance);
      for (const Tensor& w : plain) branch.head_weights.push_back(renormalize_with_prior(w, prior));
    }
    Tensor out = attn.mix(branch.head_weights, p);
    aggregate = aggregate.defined() ? add(aggregate, out) : out;
    result.per_variance_weights.push_back(branch.weights());
  }
  if (config_.variances.size() > 1) {
    aggregate = scale(aggregate, 1.0 / static_cast<double>(config_.variances.size()));
  }
  Tensor h = ln1.forward(add(x, aggregate));
  result.out = ln2.forward(add(h, ffn.forward(h)));
  return result;
}

}  // namespace mamfusion
