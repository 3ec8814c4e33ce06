// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mamfusion/errors.hpp"

namespace mamfusion {

using detail::make_result;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

// Gradient buffer of an input, or null when it takes no gradient.
std::vector<double>* grad_of(const NodePtr& node) {
  return node->requires_grad ? &node->ensure_grad() : nullptr;
}

void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  NodePtr in = a.node();
  return make_result(a.shape(), std::move(out), {a}, [in, deriv](Node& self) {
    auto* g = grad_of(in);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      (*g)[i] += self.grad[i] * deriv(in->value[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (k != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  NodePtr an = a.node(), bn = b.node();
  return make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
    const double* gc = self.grad.data();
    if (auto* ga = grad_of(an)) {
      const double* bv = bn->value.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = gc + i * n;
          const double* brow = bv + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          (*ga)[i * k + p] += acc;
        }
      }
    }
    if (auto* gb = grad_of(bn)) {
      const double* av = an->value.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = gb->data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  const auto& x = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  NodePtr in = a.node();
  return make_result({c, r}, std::move(out), {a}, [in, r, c](Node& self) {
    auto* g = grad_of(in);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_to_string(a.shape()) + " -> " + shape_to_string(shape));
  }
  const auto& x = a.data();
  NodePtr in = a.node();
  return make_result(shape, std::vector<double>(x.begin(), x.end()), {a}, [in](Node& self) {
    if (auto* g = grad_of(in))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    for (const NodePtr& in : {an, bn}) {
      if (auto* g = grad_of(in))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (auto* g = grad_of(an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto& x = a.data();
  const auto& y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (auto* g = grad_of(an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bn->value[i];
    if (auto* g = grad_of(bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * an->value[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const std::size_t r = a.rows(), c = a.cols();
  if (row.numel() != c) {
    throw DimensionError("add_row: row " + shape_to_string(row.shape()) + " does not broadcast over " +
                         shape_to_string(a.shape()));
  }
  const auto& x = a.data();
  const auto& b = row.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + b[j];
  NodePtr an = a.node(), bn = row.node();
  return make_result(a.shape(), std::move(out), {a, row}, [an, bn, r, c](Node& self) {
    if (auto* g = grad_of(an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(bn))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[j] += self.grad[i * c + j];
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double* yi = out.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yi[j] /= total;
  }
  NodePtr in = a.node();
  return make_result(a.shape(), std::move(out), {a}, [in, r, c](Node& self) {
    auto* g = grad_of(in);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.value.data() + i * c;
      const double* gy = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  const auto& x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(xi[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xi[j] - lse;
  }
  NodePtr in = a.node();
  return make_result(a.shape(), std::move(out), {a}, [in, r, c](Node& self) {
    auto* g = grad_of(in);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = self.value.data() + i * c;
      const double* gy = self.grad.data() + i * c;
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += gy[j];
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += gy[j] - std::exp(y[j]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t r = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: affine parameters " + shape_to_string(gain.shape()) +
                         " do not match width " + std::to_string(d));
  }
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<double> out(xv.size());
  std::vector<double> normed(xv.size());
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double n = (xi[j] - mu) * inv_std[i];
      normed[i * d + j] = n;
      out[i * d + j] = n * gv[j] + bv[j];
    }
  }
  NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, r, d, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
        const double* gy = self.grad.data();
        if (auto* gg = grad_of(gn))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gy[i * d + j] * normed[i * d + j];
        if (auto* gb = grad_of(bn))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gy[i * d + j];
        if (auto* gx = grad_of(xn)) {
          const double* gain_v = gn->value.data();
          const double dd = static_cast<double>(d);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_g = 0.0, mean_gn = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = gy[i * d + j] * gain_v[j];
              mean_g += gh;
              mean_gn += gh * normed[i * d + j];
            }
            mean_g /= dd;
            mean_gn /= dd;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = gy[i * d + j] * gain_v[j];
              (*gx)[i * d + j] += inv_std[i] * (gh - mean_g - normed[i * d + j] * mean_gn);
            }
          }
        }
      });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t c = a.cols();
  if (count == 0 || begin + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(a.shape()));
  }
  const auto& x = a.data();
  std::vector<double> out(x.begin() + begin * c, x.begin() + (begin + count) * c);
  NodePtr in = a.node();
  return make_result({count, c}, std::move(out), {a}, [in, begin, c](Node& self) {
    if (auto* g = grad_of(in))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * c + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  const std::size_t r = a.rows(), c = a.cols();
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(a.shape()));
  }
  const auto& x = a.data();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.begin() + i * c + begin, count, out.begin() + i * count);
  NodePtr in = a.node();
  return make_result({r, count}, std::move(out), {a}, [in, r, c, begin, count](Node& self) {
    auto* g = grad_of(in);
    if (!g) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) (*g)[i * c + begin + j] += self.grad[i * count + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column mismatch " + shape_to_string(p.shape()));
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  return make_result({total, c}, std::move(out), parts, [nodes](Node& self) {
    std::size_t offset = 0;
    for (const NodePtr& n : nodes) {
      if (auto* g = grad_of(n))
        for (std::size_t i = 0; i < n->value.size(); ++i) (*g)[i] += self.grad[offset + i];
      offset += n->value.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch " + shape_to_string(p.shape()));
    widths.push_back(p.cols());
    nodes.push_back(p.node());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& x = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(x.begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
    offset += widths[k];
  }
  return make_result({r, total}, std::move(out), parts, [nodes, widths, r, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (auto* g = grad_of(nodes[k]))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            (*g)[i * widths[k] + j] += self.grad[i * total + off + j];
      off += widths[k];
    }
  });
}

Tensor element(const Tensor& a, std::size_t r, std::size_t c) {
  if (r >= a.rows() || c >= a.cols()) {
    throw DimensionError("element: (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " +
                         shape_to_string(a.shape()));
  }
  const std::size_t idx = r * a.cols() + c;
  NodePtr in = a.node();
  return make_result({1, 1}, {a.data()[idx]}, {a}, [in, idx](Node& self) {
    if (auto* g = grad_of(in)) (*g)[idx] += self.grad[0];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  NodePtr in = a.node();
  return make_result({1, 1}, {total}, {a}, [in](Node& self) {
    if (auto* g = grad_of(in))
      for (double& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor max_cols(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  const auto& x = a.data();
  std::vector<double> out(r);
  std::vector<std::size_t> arg(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    arg[i] = static_cast<std::size_t>(std::max_element(xi, xi + c) - xi);
    out[i] = xi[arg[i]];
  }
  NodePtr in = a.node();
  return make_result({r, 1}, std::move(out), {a}, [in, arg = std::move(arg), c](Node& self) {
    if (auto* g = grad_of(in))
      for (std::size_t i = 0; i < arg.size(); ++i) (*g)[i * c + arg[i]] += self.grad[i];
  });
}

Tensor renormalize_with_prior(const Tensor& weights, const Tensor& prior) {
  require_same_shape(weights, prior, "renormalize_with_prior");
  const std::size_t r = weights.rows(), c = weights.cols();
  const auto& w = weights.data();
  const auto& p = prior.data();
  std::vector<double> out(w.size());
  std::vector<double> totals(r);
  for (std::size_t i = 0; i < r; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (out[i * c + j] = w[i * c + j] * p[i * c + j]);
    if (total <= 0.0) throw NumericError("renormalize_with_prior: row " + std::to_string(i) + " has zero mass");
    totals[i] = total;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  NodePtr wn = weights.node(), pn = prior.node();
  return make_result(weights.shape(), std::move(out), {weights},
                     [wn, pn, r, c, totals = std::move(totals)](Node& self) {
                       auto* g = grad_of(wn);
                       if (!g) return;
                       // y = u / S with u = w*p, S = sum(u).
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.value.data() + i * c;
                         const double* gy = self.grad.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
                         for (std::size_t j = 0; j < c; ++j)
                           (*g)[i * c + j] += pn->value[i * c + j] * (gy[j] - dot) / totals[i];
                       }
                     });
}

Tensor cosine_rows(const Tensor& query, const Tensor& keys, double eps) {
  const std::size_t d = query.numel();
  const std::size_t l = keys.rows();
  if (keys.cols() != d) {
    throw DimensionError("cosine_rows: query " + shape_to_string(query.shape()) + " vs keys " +
                         shape_to_string(keys.shape()));
  }
  const auto& q = query.data();
  const auto& k = keys.data();
  double qn = 0.0;
  for (double v : q) qn += v * v;
  qn = std::max(std::sqrt(qn), eps);
  std::vector<double> kn(l), out(l);
  for (std::size_t i = 0; i < l; ++i) {
    double n = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      n += k[i * d + j] * k[i * d + j];
      dot += q[j] * k[i * d + j];
    }
    kn[i] = std::max(std::sqrt(n), eps);
    out[i] = dot / (qn * kn[i]);
  }
  NodePtr qnode = query.node(), knode = keys.node();
  return make_result({1, l}, std::move(out), {query, keys},
                     [qnode, knode, d, l, qn, eps, kn = std::move(kn)](Node& self) {
                       const double* qv = qnode->value.data();
                       const double* kv = knode->value.data();
                       // Clamped norms have zero derivative.
                       const bool q_clamped = qn <= eps;
                       auto* gq = grad_of(qnode);
                       auto* gk = grad_of(knode);
                       for (std::size_t i = 0; i < l; ++i) {
                         const double gy = self.grad[i];
                         if (gy == 0.0) continue;
                         const double inv = 1.0 / (qn * kn[i]);
                         const double y = self.value[i];
                         const bool k_clamped = kn[i] <= eps;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double kj = kv[i * d + j];
                           if (gq) {
                             double dq = kj * inv;
                             if (!q_clamped) dq -= y * qv[j] / (qn * qn);
                             (*gq)[j] += gy * dq;
                           }
                           if (gk) {
                             double dk = qv[j] * inv;
                             if (!k_clamped) dk -= y * kj / (kn[i] * kn[i]);
                             (*gk)[i * d + j] += gy * dk;
                           }
                         }
                       }
                     });
}

bool all_finite(const Tensor& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace mamfusion
