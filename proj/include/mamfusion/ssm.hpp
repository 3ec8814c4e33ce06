// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mamfusion/nn.hpp"

namespace mamfusion {

struct SsmConfig {
  std::size_t d = 64;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  std::size_t dt_rank = 0;  // 0 selects ceil(d / 16)
  double dt_min = 0.001;
  double dt_max = 0.1;
  std::size_t scan_chunk = 16;

  std::size_t d_inner() const { return expand * d; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (d + 15) / 16; }
  void validate() const;
};

// Borrowed, row-major views of the selective-scan operands.
struct ScanInputs {
  std::size_t length = 0;
  std::size_t d_inner = 0;
  std::size_t d_state = 0;
  std::span<const double> delta;  // length x d_inner, strictly positive
  std::span<const double> a;      // d_inner x d_state
  std::span<const double> b;      // length x d_state
  std::span<const double> c;      // length x d_state
  std::span<const double> x;      // length x d_inner
  std::span<const double> d;      // d_inner

  void validate() const;
};

/// Step-by-step recurrence
///   h[t] = exp(delta[t] A) h[t-1] + delta[t] B[t] x[t],  h[-1] = 0
///   y[t] = C[t] . h[t] + D x[t]
/// per channel. When `states` is non-null it receives every h[t] laid out as
/// length x d_inner x d_state.
std::vector<double> selective_scan_reference(const ScanInputs& in, std::vector<double>* states = nullptr);

/// Same recurrence evaluated as a chunked associative scan: each time chunk
/// is reduced independently to (decay product, local state) pairs, chunk
/// carries are propagated, and the local states are fixed up with the
/// incoming carry. `workers` > 1 splits channels across threads.
std::vector<double> selective_scan_chunked(const ScanInputs& in, std::size_t chunk,
                                           std::vector<double>* states = nullptr,
                                           std::size_t workers = 1);

// Depthwise causal convolution with left zero padding:
// y[t][c] = sum_k kernel[c][k] * x[t - (K-1) + k][c].
Tensor causal_conv1d(const Tensor& x, const Tensor& kernel);

// Differentiable selective scan (chunked forward, analytic backward).
Tensor selective_scan(const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      const Tensor& x, const Tensor& d, std::size_t chunk = 16);

struct MambaTrace {
  Tensor u;      // conv + SiLU output, L x d_inner
  Tensor z;      // gate branch, L x d_inner
  Tensor delta;  // L x d_inner
  Tensor b;      // L x d_state
  Tensor c;      // L x d_state
  Tensor a;      // d_inner x d_state
  Tensor y;      // scan output before gating
};

/// Selective state-space block wrapped as out = X + body(LayerNorm(X)).
class MambaBlock {
 public:
  MambaBlock() = default;
  MambaBlock(ParameterRegistry& reg, const std::string& name, const SsmConfig& config);

  Tensor forward(const Tensor& x, MambaTrace* trace = nullptr) const;

  const SsmConfig& config() const { return config_; }

  LayerNorm norm;
  Linear in_proj;   // d -> 2 d_inner
  Tensor conv_kernel;  // d_inner x d_conv
  Linear x_proj;    // d_inner -> dt_rank + 2 d_state
  Linear dt_proj;   // dt_rank -> d_inner
  Tensor a_log;     // d_inner x d_state, A = -exp(a_log)
  Tensor skip;      // 1 x d_inner, the D gains
  Linear out_proj;  // d_inner -> d

 private:
  SsmConfig config_;
};

}  // namespace mamfusion
