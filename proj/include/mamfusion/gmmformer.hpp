// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <string>
#include <vector>

#include "mamfusion/nn.hpp"

namespace mamfusion {

inline constexpr double kInfiniteVariance = std::numeric_limits<double>::infinity();

struct GaussianBlockConfig {
  std::vector<double> variances{0.5, 1.0, 5.0, kInfiniteVariance};
  std::size_t heads = 4;
  std::size_t d = 64;
  std::size_t ffn_width = 256;

  void validate() const;
};

// G[i][j] = exp(-(i-j)^2 / (2 variance)); an infinite variance gives all ones.
Tensor gaussian_prior(std::size_t length, double variance);

// Self-attention of x whose weights are shaped by gaussian_prior(L, variance).
AttentionOutput gaussian_attention(const MultiHeadAttention& attn, const Tensor& x, double variance);

struct GaussianBlockOutput {
  Tensor out;
  // One heads x L x L weight tensor per configured variance.
  std::vector<Tensor> per_variance_weights;
};

/// Gaussian-constrained transformer block.
///
/// The Q/K/V projections are shared across variances; each variance yields
/// its own renormalized attention, the projected outputs are averaged, and
/// the result goes through residual + LayerNorm and an FFN with residual +
/// LayerNorm.
class GaussianBlock {
 public:
  GaussianBlock() = default;
  GaussianBlock(ParameterRegistry& reg, const std::string& name, const GaussianBlockConfig& config);

  GaussianBlockOutput forward(const Tensor& x) const;

  const GaussianBlockConfig& config() const { return config_; }

  MultiHeadAttention attn;
  LayerNorm ln1;
  FeedForward ffn;
  LayerNorm ln2;

 private:
  GaussianBlockConfig config_;
};

}  // namespace mamfusion
