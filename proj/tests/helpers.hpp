// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mamfusion/nn.hpp"
#include "mamfusion/ops.hpp"
#include "mamfusion/tensor.hpp"

namespace testutil {

using mamfusion::Shape;
using mamfusion::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(mamfusion::shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(shape, std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Plain row-major matrix product.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  std::vector<double> e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (e[i] = std::exp(x[i] - m));
  for (double& v : e) v /= z;
  return e;
}

struct GradCheck {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

// Compares backward() against central differences for every listed leaf.
// The error of a tensor is ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||);
// a tensor whose two gradients are both below 1e-9 in norm counts as zero error.
inline std::vector<GradCheck> finite_difference_check(const std::function<Tensor()>& f,
                                                      const std::vector<std::pair<std::string, Tensor>>& leaves,
                                                      double h = 1e-4) {
  for (const auto& [name, t] : leaves) t.node()->grad.clear();
  Tensor loss = f();
  mamfusion::backward(loss);
  std::vector<GradCheck> out;
  for (const auto& [name, t] : leaves) {
    Tensor leaf = t;
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
    std::vector<double> numeric(leaf.numel());
    {
      mamfusion::NoGradGuard ng;
      for (std::size_t i = 0; i < leaf.numel(); ++i) {
        double& x = leaf.mutable_data()[i];
        const double saved = x;
        x = saved + h;
        const double fp = f().item();
        x = saved - h;
        const double fm = f().item();
        x = saved;
        numeric[i] = (fp - fm) / (2.0 * h);
      }
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    diff = std::sqrt(diff), na = std::sqrt(na), nn = std::sqrt(nn);
    const double denom = std::max(na, nn);
    out.push_back({name, denom < 1e-9 ? 0.0 : diff / denom, na, nn});
  }
  return out;
}

inline double worst(const std::vector<GradCheck>& checks) {
  double w = 0.0;
  for (const auto& c : checks) w = std::max(w, c.rel_error);
  return w;
}

inline std::vector<std::pair<std::string, Tensor>> registry_leaves(const mamfusion::ParameterRegistry& reg) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : reg.params()) out.emplace_back(p.name, p.tensor);
  return out;
}

}  // namespace testutil
