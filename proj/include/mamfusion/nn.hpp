// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mamfusion/ops.hpp"
#include "mamfusion/tensor.hpp"

namespace mamfusion {

// Trainable tensor with a unique hierarchical name such as "fusion.tvt.w_q".
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Owns every trainable tensor of a model. Modules keep shallow Tensor
/// handles into the registry, so in-place updates are visible everywhere.
class ParameterRegistry {
 public:
  explicit ParameterRegistry(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor zeros(const std::string& name, const Shape& shape);
  Tensor constant(const std::string& name, const Shape& shape, double value);
  Tensor uniform(const std::string& name, const Shape& shape, double bound);
  // Glorot-uniform for a fan_in x fan_out matrix.
  Tensor xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out);
  Tensor add(const std::string& name, Tensor value);

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t total_elements() const;
  void zero_grad();

  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<Parameter> params_;
  std::mt19937_64 rng_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out,
         bool bias = true);

  Tensor forward(const Tensor& x) const;

  Tensor weight;  // in x out
  Tensor bias;    // 1 x out, undefined when the layer has no bias
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterRegistry& reg, const std::string& name, std::size_t d, double eps = 1e-5);

  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

  Tensor gain;
  Tensor bias;
  double eps = 1e-5;
};

// Position-wise two-layer MLP with ReLU.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterRegistry& reg, const std::string& name, std::size_t d, std::size_t inner);

  Tensor forward(const Tensor& x) const { return fc2.forward(relu(fc1.forward(x))); }

  Linear fc1;
  Linear fc2;
};

struct AttentionOutput {
  Tensor out;                        // Lq x d
  std::vector<Tensor> head_weights;  // per head, Lq x Lk, live on the tape
  // heads x Lq x Lk copy of head_weights for inspection and export.
  Tensor weights() const;
};

/// Multi-head scaled dot-product attention with learned projections.
///
/// Each head h attends with softmax(Q_h K_h^T / sqrt(d_head)). An optional
/// nonnegative Lq x Lk prior reshapes the weights multiplicatively; rows are
/// renormalized afterwards. Head outputs are concatenated and projected by
/// w_o. The value projection has a bias, the output projection does not, so
/// zeroing w_v and b_v makes the whole output exactly zero.
class MultiHeadAttention {
 public:
  struct Projected {
    Tensor q;  // Lq x d
    Tensor k;  // Lk x d
    Tensor v;  // Lk x d
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterRegistry& reg, const std::string& name, std::size_t d,
                     std::size_t heads);

  AttentionOutput forward(const Tensor& query, const Tensor& key, const Tensor& value,
                          const Tensor* prior = nullptr) const;

  Projected project(const Tensor& query, const Tensor& key, const Tensor& value) const;
  std::vector<Tensor> head_weights(const Projected& p) const;
  // Weighted value sum per head, concatenated, then the output projection.
  Tensor mix(const std::vector<Tensor>& weights, const Projected& p) const;

  std::size_t d() const { return d_; }
  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return d_ / heads_; }

  Linear w_q;
  Linear w_k;
  Linear w_v;
  Linear w_o;

 private:
  std::size_t d_ = 0;
  std::size_t heads_ = 1;
};

// Post-norm encoder layer: x1 = LN(x + MHA(x)), out = LN(x1 + FFN(x1)).
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParameterRegistry& reg, const std::string& name, std::size_t d,
                   std::size_t heads, std::size_t ffn_width);

  Tensor forward(const Tensor& x, AttentionOutput* attention = nullptr) const;

  MultiHeadAttention attn;
  LayerNorm ln1;
  FeedForward ffn;
  LayerNorm ln2;
};

struct PoolResult {
  Tensor vec;    // 1 x d
  Tensor alpha;  // 1 x L
};

// alpha = softmax(w X^T), vec = alpha X.
PoolResult attention_pool(const Tensor& x, const Tensor& w);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

// Bias-corrected Adam update over every parameter that holds a gradient.
// Parameters without a gradient buffer are treated as having zero gradient.
void adam_step(std::vector<Parameter>& params, AdamState& state, const AdamConfig& config);

// Scales all gradients so that their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

}  // namespace mamfusion
