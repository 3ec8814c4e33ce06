// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/nn.hpp"

#include <cmath>

#include "mamfusion/errors.hpp"

namespace mamfusion {

Tensor ParameterRegistry::add(const std::string& name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  params_.push_back({name, value});
  return value;
}

Tensor ParameterRegistry::zeros(const std::string& name, const Shape& shape) {
  return add(name, Tensor::zeros(shape));
}

Tensor ParameterRegistry::constant(const std::string& name, const Shape& shape, double value) {
  return add(name, Tensor::full(shape, value));
}

Tensor ParameterRegistry::uniform(const std::string& name, const Shape& shape, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng_);
  return add(name, Tensor::from(shape, std::move(values)));
}

Tensor ParameterRegistry::xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(name, {fan_in, fan_out}, bound);
}

const Parameter* ParameterRegistry::find(const std::string& name) const {
  for (const Parameter& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterRegistry::total_elements() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterRegistry::zero_grad() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

Linear::Linear(ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out,
               bool with_bias)
    : weight(reg.xavier(name + ".weight", in, out)) {
  if (with_bias) bias = reg.zeros(name + ".bias", {1, out});
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

LayerNorm::LayerNorm(ParameterRegistry& reg, const std::string& name, std::size_t d, double eps_)
    : gain(reg.constant(name + ".gain", {1, d}, 1.0)), bias(reg.zeros(name + ".bias", {1, d})), eps(eps_) {}

FeedForward::FeedForward(ParameterRegistry& reg, const std::string& name, std::size_t d,
                         std::size_t inner)
    : fc1(reg, name + ".fc1", d, inner), fc2(reg, name + ".fc2", inner, d) {}

Tensor AttentionOutput::weights() const {
  const std::size_t heads = head_weights.size();
  const std::size_t lq = head_weights.front().rows(), lk = head_weights.front().cols();
  std::vector<double> values;
  values.reserve(heads * lq * lk);
  for (const Tensor& w : head_weights) values.insert(values.end(), w.data().begin(), w.data().end());
  return Tensor::from({heads, lq, lk}, std::move(values));
}

MultiHeadAttention::MultiHeadAttention(ParameterRegistry& reg, const std::string& name,
                                       std::size_t d, std::size_t heads)
    : d_(d), heads_(heads) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError(name + ": width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  w_q = Linear(reg, name + ".w_q", d, d);
  w_k = Linear(reg, name + ".w_k", d, d);
  w_v = Linear(reg, name + ".w_v", d, d);
  w_o = Linear(reg, name + ".w_o", d, d, /*bias=*/false);
}

MultiHeadAttention::Projected MultiHeadAttention::project(const Tensor& query, const Tensor& key,
                                                          const Tensor& value) const {
  if (query.cols() != d_ || key.cols() != d_ || value.cols() != d_) {
    throw DimensionError("attention inputs " + shape_to_string(query.shape()) + ", " +
                         shape_to_string(key.shape()) + ", " + shape_to_string(value.shape()) +
                         " do not match width " + std::to_string(d_));
  }
  if (key.rows() != value.rows()) throw DimensionError("attention key/value lengths differ");
  return {w_q.forward(query), w_k.forward(key), w_v.forward(value)};
}

std::vector<Tensor> MultiHeadAttention::head_weights(const Projected& p) const {
  const std::size_t dh = head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> out;
  out.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor qh = slice_cols(p.q, h * dh, dh);
    Tensor kh = slice_cols(p.k, h * dh, dh);
    out.push_back(softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt)));
  }
  return out;
}

Tensor MultiHeadAttention::mix(const std::vector<Tensor>& weights, const Projected& p) const {
  const std::size_t dh = head_dim();
  std::vector<Tensor> parts;
  parts.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    parts.push_back(matmul(weights[h], slice_cols(p.v, h * dh, dh)));
  }
  Tensor merged = heads_ == 1 ? parts.front() : concat_cols(parts);
  return w_o.forward(merged);
}

AttentionOutput MultiHeadAttention::forward(const Tensor& query, const Tensor& key,
                                            const Tensor& value, const Tensor* prior) const {
  Projected p = project(query, key, value);
  std::vector<Tensor> weights = head_weights(p);
  if (prior) {
    if (prior->rows() != query.rows() || prior->cols() != key.rows()) {
      throw DimensionError("attention prior " + shape_to_string(prior->shape()) + " does not match " +
                           std::to_string(query.rows()) + "x" + std::to_string(key.rows()));
    }
    for (Tensor& w : weights) w = renormalize_with_prior(w, *prior);
  }
  Tensor out = mix(weights, p);
  return {out, std::move(weights)};
}

TransformerLayer::TransformerLayer(ParameterRegistry& reg, const std::string& name, std::size_t d,
                                   std::size_t heads, std::size_t ffn_width)
    : attn(reg, name + ".attn", d, heads),
      ln1(reg, name + ".ln1", d),
      ffn(reg, name + ".ffn", d, ffn_width),
      ln2(reg, name + ".ln2", d) {}

Tensor TransformerLayer::forward(const Tensor& x, AttentionOutput* attention) const {
  AttentionOutput a = attn.forward(x, x, x);
  Tensor h = ln1.forward(add(x, a.out));
  Tensor out = ln2.forward(add(h, ffn.forward(h)));
  if (attention) *attention = std::move(a);
  return out;
}

PoolResult attention_pool(const Tensor& x, const Tensor& w) {
  if (w.numel() != x.cols()) {
    throw DimensionError("attention_pool: vector " + shape_to_string(w.shape()) + " vs input " +
                         shape_to_string(x.shape()));
  }
  Tensor alpha = softmax_rows(matmul(w, transpose(x)));
  return {matmul(alpha, x), alpha};
}

void adam_step(std::vector<Parameter>& params, AdamState& state, const AdamConfig& config) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.numel(), 0.0);
      state.v[i].assign(params[i].tensor.numel(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    auto values = p.mutable_data();
    const bool has = p.has_grad();
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      values[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double clip_grad_norm(std::vector<Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Parameter& p : params)
      for (double& g : p.tensor.mutable_grad()) g *= factor;
  }
  return norm;
}

}  // namespace mamfusion
