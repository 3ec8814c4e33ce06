// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "mamfusion/tensor.hpp"

// Differentiable primitives. Every function here records itself on the tape
// when grad mode is on and an input requires grad.
namespace mamfusion {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a (R x C) + row (1 x C), broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);

// Max-subtracted softmax over the last axis.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

// Per-row normalization to zero mean and unit (biased) variance, then
// gain * x + bias. gain and bias are 1 x d.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor element(const Tensor& a, std::size_t r, std::size_t c);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Row-wise maximum, R x C -> R x 1. Gradient goes to the first argmax.
Tensor max_cols(const Tensor& a);

// weights (R x C) multiplied element-wise by a constant nonnegative prior and
// renormalized so that each row sums to one.
Tensor renormalize_with_prior(const Tensor& weights, const Tensor& prior);

// Cosine similarity of a 1 x d query against each row of keys (L x d),
// giving 1 x L. Norms are clamped below by eps, so a zero vector scores 0.
Tensor cosine_rows(const Tensor& query, const Tensor& keys, double eps = 1e-8);

bool all_finite(const Tensor& a);

}  // namespace mamfusion
