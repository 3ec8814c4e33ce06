// SPDX-License-Identifier: Apache-2.0
#include "mamfusion/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "mamfusion/errors.hpp"

namespace mamfusion {

using detail::make_result;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void SsmConfig::validate() const {
  if (d == 0 || d_state == 0 || d_conv == 0 || expand == 0) {
    throw ConfigError("SSM sizes must be positive");
  }
  if (!(dt_min > 0.0) || !(dt_max >= dt_min)) throw ConfigError("SSM dt range must satisfy 0 < dt_min <= dt_max");
  if (scan_chunk == 0) throw ConfigError("scan chunk must be positive");
}

void ScanInputs::validate() const {
  const std::size_t ld = length * d_inner, dn = d_inner * d_state, ln = length * d_state;
  if (delta.size() != ld || x.size() != ld || a.size() != dn || b.size() != ln || c.size() != ln ||
      d.size() != d_inner) {
    throw DimensionError("selective scan: operand sizes inconsistent with L=" + std::to_string(length) +
                         ", d_inner=" + std::to_string(d_inner) + ", d_state=" + std::to_string(d_state));
  }
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!(delta[i] > 0.0)) {
      throw NumericError("selective scan: delta must be strictly positive (index " + std::to_string(i) + ")");
    }
  }
}

std::vector<double> selective_scan_reference(const ScanInputs& in, std::vector<double>* states) {
  in.validate();
  const std::size_t L = in.length, Di = in.d_inner, N = in.d_state;
  std::vector<double> y(L * Di, 0.0);
  std::vector<double> h(Di * N, 0.0);
  if (states) states->assign(L * Di * N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t ch = 0; ch < Di; ++ch) {
      const double dt = in.delta[t * Di + ch];
      const double xt = in.x[t * Di + ch];
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double& state = h[ch * N + n];
        state = std::exp(dt * in.a[ch * N + n]) * state + dt * in.b[t * N + n] * xt;
        acc += in.c[t * N + n] * state;
      }
      y[t * Di + ch] = acc + in.d[ch] * xt;
    }
    if (states) std::copy(h.begin(), h.end(), states->begin() + t * Di * N);
  }
  return y;
}

namespace {

// Scans channels [c0, c1) of the recurrence in time chunks.
void scan_channels(const ScanInputs& in, std::size_t chunk, std::size_t c0, std::size_t c1,
                   std::vector<double>& y, std::vector<double>& h_all) {
  const std::size_t L = in.length, Di = in.d_inner, N = in.d_state;
  const std::size_t n_chunks = (L + chunk - 1) / chunk;
  // decay[t] holds the running product of exp(delta A) since chunk start,
  // h_all[t] the state reached from a zero state at chunk start.
  std::vector<double> decay(L * N);
  std::vector<double> carry(N);
  for (std::size_t ch = c0; ch < c1; ++ch) {
    const double* a_row = in.a.data() + ch * N;
    // Chunk-local reductions; independent across chunks.
    for (std::size_t k = 0; k < n_chunks; ++k) {
      const std::size_t t0 = k * chunk, t1 = std::min(L, t0 + chunk);
      for (std::size_t t = t0; t < t1; ++t) {
        const double dt = in.delta[t * Di + ch];
        const double bx = dt * in.x[t * Di + ch];
        double* dec = decay.data() + t * N;
        double* st = h_all.data() + (t * Di + ch) * N;
        for (std::size_t n = 0; n < N; ++n) {
          const double a = std::exp(dt * a_row[n]);
          const double b = bx * in.b[t * N + n];
          if (t == t0) {
            dec[n] = a;
            st[n] = b;
          } else {
            dec[n] = a * dec[n - N];
            st[n] = a * st[n - Di * N] + b;
          }
        }
      }
    }
    // Carry propagation across chunks, then fix-up.
    std::fill(carry.begin(), carry.end(), 0.0);
    for (std::size_t k = 0; k < n_chunks; ++k) {
      const std::size_t t0 = k * chunk, t1 = std::min(L, t0 + chunk);
      if (k > 0) {
        for (std::size_t t = t0; t < t1; ++t) {
          double* st = h_all.data() + (t * Di + ch) * N;
          const double* dec = decay.data() + t * N;
          for (std::size_t n = 0; n < N; ++n) st[n] += dec[n] * carry[n];
        }
      }
      const double* last = h_all.data() + ((t1 - 1) * Di + ch) * N;
      std::copy(last, last + N, carry.begin());
    }
    for (std::size_t t = 0; t < L; ++t) {
      const double* st = h_all.data() + (t * Di + ch) * N;
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += in.c[t * N + n] * st[n];
      y[t * Di + ch] = acc + in.d[ch] * in.x[t * Di + ch];
    }
  }
}

}  // namespace

std::vector<double> selective_scan_chunked(const ScanInputs& in, std::size_t chunk,
                                           std::vector<double>* states, std::size_t workers) {
  in.validate();
  if (chunk == 0) throw ConfigError("scan chunk must be positive");
  const std::size_t L = in.length, Di = in.d_inner, N = in.d_state;
  std::vector<double> y(L * Di, 0.0);
  std::vector<double> local_states;
  std::vector<double>& h_all = states ? *states : local_states;
  h_all.assign(L * Di * N, 0.0);

  workers = std::clamp<std::size_t>(workers, 1, Di);
  if (workers == 1) {
    scan_channels(in, chunk, 0, Di, y, h_all);
    return y;
  }
  // Workers own disjoint channel ranges, so writes never overlap.
  std::vector<std::thread> pool;
  const std::size_t per = (Di + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t c0 = w * per, c1 = std::min(Di, c0 + per);
    if (c0 >= c1) break;
    pool.emplace_back([&, c0, c1] { scan_channels(in, chunk, c0, c1, y, h_all); });
  }
  for (auto& t : pool) t.join();
  return y;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& kernel) {
  const std::size_t L = x.rows(), Di = x.cols(), K = kernel.cols();
  if (kernel.rows() != Di) {
    throw DimensionError("causal_conv1d: kernel " + shape_to_string(kernel.shape()) + " vs input " +
                         shape_to_string(x.shape()));
  }
  const auto& xv = x.data();
  const auto& kv = kernel.data();
  std::vector<double> out(L * Di, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(K - 1);
      if (s < 0) continue;
      for (std::size_t ch = 0; ch < Di; ++ch) out[t * Di + ch] += kv[ch * K + k] * xv[s * Di + ch];
    }
  }
  NodePtr xn = x.node(), kn = kernel.node();
  return make_result({L, Di}, std::move(out), {x, kernel}, [xn, kn, L, Di, K](Node& self) {
    auto* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
    auto* gk = kn->requires_grad ? &kn->ensure_grad() : nullptr;
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(K - 1);
        if (s < 0) continue;
        for (std::size_t ch = 0; ch < Di; ++ch) {
          const double g = self.grad[t * Di + ch];
          if (gx) (*gx)[s * Di + ch] += g * kn->value[ch * K + k];
          if (gk) (*gk)[ch * K + k] += g * xn->value[s * Di + ch];
        }
      }
    }
  });
}

Tensor selective_scan(const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      const Tensor& x, const Tensor& d, std::size_t chunk) {
  ScanInputs in;
  in.length = x.rows();
  in.d_inner = x.cols();
  in.d_state = a.cols();
  in.delta = delta.data();
  in.a = a.data();
  in.b = b.data();
  in.c = c.data();
  in.x = x.data();
  in.d = d.data();
  std::vector<double> states;
  std::vector<double> y = selective_scan_chunked(in, chunk, &states);

  const std::size_t L = in.length, Di = in.d_inner, N = in.d_state;
  NodePtr dn = delta.node(), an = a.node(), bn = b.node(), cn = c.node(), xn = x.node(), skn = d.node();
  return make_result(
      {L, Di}, std::move(y), {delta, a, b, c, x, d},
      [dn, an, bn, cn, xn, skn, L, Di, N, states = std::move(states)](Node& self) {
        auto grad = [](const NodePtr& n) { return n->requires_grad ? &n->ensure_grad() : nullptr; };
        auto* g_delta = grad(dn);
        auto* g_a = grad(an);
        auto* g_b = grad(bn);
        auto* g_c = grad(cn);
        auto* g_x = grad(xn);
        auto* g_d = grad(skn);
        const auto& dv = dn->value;
        const auto& av = an->value;
        const auto& bv = bn->value;
        const auto& cv = cn->value;
        const auto& xv = xn->value;
        const auto& sv = skn->value;
        const auto& gy = self.grad;

        // g_h carries dLoss/dh[t] backwards through time, one row per channel.
        std::vector<double> g_h(Di * N, 0.0);
        for (std::size_t t = L; t-- > 0;) {
          for (std::size_t ch = 0; ch < Di; ++ch) {
            const double gyt = gy[t * Di + ch];
            const double dt = dv[t * Di + ch];
            const double xt = xv[t * Di + ch];
            if (g_d) (*g_d)[ch] += gyt * xt;
            if (g_x) (*g_x)[t * Di + ch] += gyt * sv[ch];
            double gdt = 0.0, gxt = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
              const double h_t = states[(t * Di + ch) * N + n];
              const double h_prev = t ? states[((t - 1) * Di + ch) * N + n] : 0.0;
              if (g_c) (*g_c)[t * N + n] += gyt * h_t;
              double& gh = g_h[ch * N + n];
              gh += gyt * cv[t * N + n];
              const double a_cn = av[ch * N + n];
              const double decay = std::exp(dt * a_cn);
              const double g_decay = gh * h_prev * decay;  // d/d(dt*A) of exp
              gdt += g_decay * a_cn + gh * bv[t * N + n] * xt;
              if (g_a) (*g_a)[ch * N + n] += g_decay * dt;
              if (g_b) (*g_b)[t * N + n] += gh * dt * xt;
              gxt += gh * dt * bv[t * N + n];
              gh *= decay;  // propagate to h[t-1]
            }
            if (g_delta) (*g_delta)[t * Di + ch] += gdt;
            if (g_x) (*g_x)[t * Di + ch] += gxt;
          }
        }
      });
}

MambaBlock::MambaBlock(ParameterRegistry& reg, const std::string& name, const SsmConfig& config)
    : config_(config) {
  config_.validate();
  const std::size_t d = config.d, di = config.d_inner(), n = config.d_state;
  const std::size_t rank = config.resolved_dt_rank();
  norm = LayerNorm(reg, name + ".norm", d);
  in_proj = Linear(reg, name + ".in_proj", d, 2 * di, /*bias=*/false);
  conv_kernel = reg.uniform(name + ".conv_kernel", {di, config.d_conv},
                            1.0 / std::sqrt(static_cast<double>(config.d_conv)));
  x_proj = Linear(reg, name + ".x_proj", di, rank + 2 * n, /*bias=*/false);
  dt_proj.weight = reg.uniform(name + ".dt_proj.weight", {rank, di}, 1.0 / std::sqrt(static_cast<double>(rank)));
  // dt initialized log-uniformly in [dt_min, dt_max]; the bias is its inverse softplus.
  std::vector<double> dt_bias(di);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double lo = std::log(config.dt_min), hi = std::log(config.dt_max);
  for (double& v : dt_bias) {
    const double dt = std::exp(lo + unit(reg.rng()) * (hi - lo));
    v = dt + std::log(-std::expm1(-dt));
  }
  dt_proj.bias = reg.add(name + ".dt_proj.bias", Tensor::from({1, di}, std::move(dt_bias)));
  // S4D-real initialization: A[c][n] = -(n + 1).
  std::vector<double> a_init(di * n);
  for (std::size_t c = 0; c < di; ++c)
    for (std::size_t k = 0; k < n; ++k) a_init[c * n + k] = std::log(static_cast<double>(k + 1));
  a_log = reg.add(name + ".a_log", Tensor::from({di, n}, std::move(a_init)));
  skip = reg.constant(name + ".d", {1, di}, 1.0);
  out_proj = Linear(reg, name + ".out_proj", di, d, /*bias=*/false);
}

Tensor MambaBlock::forward(const Tensor& x, MambaTrace* trace) const {
  if (x.cols() != config_.d) {
    throw DimensionError("mamba block expects width " + std::to_string(config_.d) + ", got " +
                         shape_to_string(x.shape()));
  }
  const std::size_t di = config_.d_inner(), n = config_.d_state, rank = config_.resolved_dt_rank();
  Tensor projected = in_proj.forward(norm.forward(x));
  Tensor u = silu(causal_conv1d(slice_cols(projected, 0, di), conv_kernel));
  Tensor z = slice_cols(projected, di, di);
  Tensor xp = x_proj.forward(u);
  Tensor delta = softplus(dt_proj.forward(slice_cols(xp, 0, rank)));
  Tensor b = slice_cols(xp, rank, n);
  Tensor c = slice_cols(xp, rank + n, n);
  Tensor a = scale(exp(a_log), -1.0);
  Tensor y = selective_scan(delta, a, b, c, u, skip, config_.scan_chunk);
  Tensor out = out_proj.forward(mul(y, silu(z)));
  if (trace) *trace = {u, z, delta, b, c, a, y};
  return add(x, out);
}

}  // namespace mamfusion
