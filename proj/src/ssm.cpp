// Copyright 2026 The USKT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "uskt/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "detail.hpp"
#include "uskt/ops.hpp"

namespace uskt {

using detail::require;
using detail::wants_grad;

int thread_count() {
  const char* env = std::getenv("USKT_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

template <typename T>
SSMParams<T>::SSMParams(Index width_, Index state_, Rng& rng) : width(width_), state(state_) {
  Buffer<T> a_log_v(static_cast<std::size_t>(width * state));
  Buffer<T> b_v(a_log_v.size()), c_v(a_log_v.size());
  const double stddev = 1.0 / std::sqrt(static_cast<double>(state));
  for (auto& v : a_log_v) v = static_cast<T>(std::log(rng.uniform(0.5, 8.0)));
  for (auto& v : b_v) v = static_cast<T>(rng.normal(0.0, stddev));
  for (auto& v : c_v) v = static_cast<T>(rng.normal(0.0, stddev));
  Buffer<T> dl_v(static_cast<std::size_t>(width));
  for (auto& v : dl_v) v = static_cast<T>(std::log(rng.uniform(0.001, 0.1)));
  a_log = Tensor<T>({width, state}, std::move(a_log_v), true);
  b = Tensor<T>({width, state}, std::move(b_v), true);
  c = Tensor<T>({width, state}, std::move(c_v), true);
  d = Tensor<T>::full({width}, T(1), true);
  delta_log = Tensor<T>({width}, std::move(dl_v), true);
}

template <typename T>
void SSMParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".A_log", a_log, false});
  out.push_back({prefix + ".B", b, false});
  out.push_back({prefix + ".C", c, false});
  out.push_back({prefix + ".D", d, false});
  out.push_back({prefix + ".delta_log", delta_log, false});
}

template <typename T>
Discretized<T> discretize(Tape<T>& tape, const SSMParams<T>& p) {
  const Index e = p.width, s = p.state;
  const auto al = p.a_log.data(), bv = p.b.data(), dl = p.delta_log.data();
  Buffer<T> a_bar(static_cast<std::size_t>(e * s)), b_bar(a_bar.size());
  for (Index i = 0; i < e; ++i) {
    const T delta = std::exp(dl[i]);
    for (Index j = 0; j < s; ++j) {
      const Index k = i * s + j;
      a_bar[k] = std::exp(-delta * std::exp(al[k]));
      b_bar[k] = delta * bv[k];
    }
  }
  const bool rg = detail::any_wants_grad<T>({&p.a_log, &p.b, &p.delta_log});
  Discretized<T> out{detail::make_output<T>("discretize", {e, s}, std::move(a_bar), rg),
                     detail::make_output<T>("discretize", {e, s}, std::move(b_bar), rg)};
  if (rg) {
    tape.record("discretize", [a_log = p.a_log, b = p.b, delta_log = p.delta_log,
                               a_out = out.a_bar, b_out = out.b_bar, e, s]() mutable {
      const bool ga = a_out.has_grad(), gb = b_out.has_grad();
      if (!ga && !gb) return;
      const auto al2 = a_log.data(), bv2 = b.data(), dl2 = delta_log.data();
      const auto abar = a_out.data();
      std::span<T> g_al, g_b, g_dl;
      if (wants_grad(a_log)) g_al = a_log.grad_buffer();
      if (wants_grad(b)) g_b = b.grad_buffer();
      if (wants_grad(delta_log)) g_dl = delta_log.grad_buffer();
      for (Index i = 0; i < e; ++i) {
        const T delta = std::exp(dl2[i]);
        for (Index j = 0; j < s; ++j) {
          const Index k = i * s + j;
          if (ga) {
            // d a_bar / d a_log = d a_bar / d delta_log = a_bar * delta * A
            const T da = a_out.grad()[k] * abar[k] * delta * -std::exp(al2[k]);
            if (!g_al.empty()) g_al[k] += da;
            if (!g_dl.empty()) g_dl[i] += da;
          }
          if (gb) {
            const T gbv = b_out.grad()[k];
            if (!g_b.empty()) g_b[k] += gbv * delta;
            if (!g_dl.empty()) g_dl[i] += gbv * delta * bv2[k];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Discretized<T> discretize(const SSMParams<T>& params) {
  Tape<T> scratch;
  Discretized<T> d = discretize(scratch, params);
  return {d.a_bar.detach_copy(), d.b_bar.detach_copy()};
}

template <typename T>
void scan_states_sequential(std::span<const T> a_bar, std::span<const T> b_bar,
                            std::span<const T> x, Index length, Index width, Index state,
                            std::span<T> h) {
  const Index lanes = width * state;
  for (Index t = 0; t < length; ++t) {
    T* cur = h.data() + t * lanes;
    const T* prev = t > 0 ? h.data() + (t - 1) * lanes : nullptr;
    const T* xt = x.data() + t * width;
    for (Index e = 0; e < width; ++e) {
      for (Index s = 0; s < state; ++s) {
        const Index k = e * state + s;
        const T carry = prev ? a_bar[k] * prev[k] : T(0);
        cur[k] = carry + b_bar[k] * xt[e];
      }
    }
  }
}

template <typename T>
void scan_states_parallel(std::span<const T> a_bar, std::span<const T> b_bar,
                          std::span<const T> x, Index length, Index width, Index state,
                          std::span<T> h, int threads) {
  const Index lanes = width * state;
  const Index chunk =
      std::max<Index>(1, static_cast<Index>(std::sqrt(static_cast<double>(length))));
  const Index chunks = (length + chunk - 1) / chunk;
  // prefix[t] holds the multiplicative part of the composed map from the
  // chunk start to t; h[t] first holds its additive part.
  Buffer<T> prefix(static_cast<std::size_t>(length * lanes));

  auto local_scan = [&](Index c) {
    const Index begin = c * chunk, end = std::min(length, begin + chunk);
    for (Index t = begin; t < end; ++t) {
      T* pa = prefix.data() + t * lanes;
      T* pb = h.data() + t * lanes;
      const T* xt = x.data() + t * width;
      for (Index e = 0; e < width; ++e) {
        for (Index s = 0; s < state; ++s) {
          const Index k = e * state + s;
          const T step_b = b_bar[k] * xt[e];
          if (t == begin) {
            pa[k] = a_bar[k];
            pb[k] = step_b;
          } else {
            // (a2, b2) ∘ (a1, b1) = (a2*a1, a2*b1 + b2)
            pa[k] = a_bar[k] * pa[k - lanes];
            pb[k] = a_bar[k] * pb[k - lanes] + step_b;
          }
        }
      }
    }
  };
  auto apply_carry = [&](Index c, const T* carry) {
    const Index begin = c * chunk, end = std::min(length, begin + chunk);
    for (Index t = begin; t < end; ++t) {
      const T* pa = prefix.data() + t * lanes;
      T* pb = h.data() + t * lanes;
      for (Index k = 0; k < lanes; ++k) pb[k] = pa[k] * carry[k] + pb[k];
    }
  };
  auto for_chunks = [&](auto&& fn) {
    const int workers = static_cast<int>(std::min<Index>(std::max(threads, 1), chunks));
    if (workers <= 1) {
      for (Index c = 0; c < chunks; ++c) fn(c);
      return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (Index c = w; c < chunks; c += workers) fn(c);
      });
    }
    for (auto& th : pool) th.join();
  };

  for_chunks(local_scan);
  // Exclusive scan of the chunk aggregates gives each chunk its incoming state.
  Buffer<T> carries(static_cast<std::size_t>(chunks * lanes), T(0));
  for (Index c = 1; c < chunks; ++c) {
    const Index last = std::min(length, c * chunk) - 1;
    const T* pa = prefix.data() + last * lanes;
    const T* pb = h.data() + last * lanes;
    const T* prev = carries.data() + (c - 1) * lanes;
    T* cur = carries.data() + c * lanes;
    for (Index k = 0; k < lanes; ++k) cur[k] = pa[k] * prev[k] + pb[k];
  }
  for_chunks([&](Index c) {
    if (c > 0) apply_carry(c, carries.data() + c * lanes);
  });
}

template <typename T>
void scan_readout(std::span<const T> h, std::span<const T> c, std::span<const T> d,
                  std::span<const T> x, Index length, Index width, Index state, std::span<T> y) {
  const Index lanes = width * state;
  for (Index t = 0; t < length; ++t) {
    const T* ht = h.data() + t * lanes;
    for (Index e = 0; e < width; ++e) {
      T acc = d[e] * x[t * width + e];
      for (Index s = 0; s < state; ++s) acc += c[e * state + s] * ht[e * state + s];
      y[t * width + e] = acc;
    }
  }
}

namespace {

template <typename T>
void check_scan_args(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                     const Tensor<T>& d, const Tensor<T>& x) {
  require(x.defined() && x.rank() == 2, "ssm scan: x must be L×E");
  const Index e = x.dim(1);
  require(a_bar.rank() == 2 && a_bar.dim(0) == e, "ssm scan: a_bar " + shape_str(a_bar.shape()) +
                                                      " does not match x " + shape_str(x.shape()));
  require(b_bar.shape() == a_bar.shape() && c.shape() == a_bar.shape(),
          "ssm scan: a_bar, b_bar and C must share an E×S shape");
  require(d.rank() == 1 && d.dim(0) == e, "ssm scan: D must have E elements");
}

template <typename T>
Buffer<T> run_states(ScanKernel kernel, const Tensor<T>& a_bar, const Tensor<T>& b_bar,
                          const Tensor<T>& x, int threads) {
  const Index len = x.dim(0), e = x.dim(1), s = a_bar.dim(1);
  Buffer<T> h(static_cast<std::size_t>(len * e * s));
  if (kernel == ScanKernel::sequential) {
    scan_states_sequential<T>(a_bar.data(), b_bar.data(), x.data(), len, e, s, h);
  } else {
    scan_states_parallel<T>(a_bar.data(), b_bar.data(), x.data(), len, e, s, h, threads);
  }
  return h;
}

template <typename T>
Tensor<T> scan_untracked(ScanKernel kernel, const Tensor<T>& a_bar, const Tensor<T>& b_bar,
                         const Tensor<T>& c, const Tensor<T>& d, const Tensor<T>& x,
                         int threads) {
  check_scan_args(a_bar, b_bar, c, d, x);
  const Index len = x.dim(0), e = x.dim(1), s = a_bar.dim(1);
  const Buffer<T> h = run_states(kernel, a_bar, b_bar, x, threads);
  Buffer<T> y(static_cast<std::size_t>(len * e));
  scan_readout<T>(h, c.data(), d.data(), x.data(), len, e, s, y);
  return Tensor<T>(x.shape(), std::move(y));
}

}  // namespace

template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                          const Tensor<T>& d, const Tensor<T>& x) {
  return scan_untracked(ScanKernel::sequential, a_bar, b_bar, c, d, x, 1);
}

template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                        const Tensor<T>& d, const Tensor<T>& x, int threads) {
  return scan_untracked(ScanKernel::parallel, a_bar, b_bar, c, d, x, threads);
}

template <typename T>
Tensor<T> ssm_scan(Tape<T>& tape, const Tensor<T>& a_bar, const Tensor<T>& b_bar,
                   const Tensor<T>& c, const Tensor<T>& d, const Tensor<T>& x,
                   ScanKernel kernel) {
  check_scan_args(a_bar, b_bar, c, d, x);
  const Index len = x.dim(0), e = x.dim(1), s = a_bar.dim(1);
  Buffer<T> h = run_states(kernel, a_bar, b_bar, x, thread_count());
  Buffer<T> y(static_cast<std::size_t>(len * e));
  scan_readout<T>(h, c.data(), d.data(), x.data(), len, e, s, y);
  const bool rg = detail::any_wants_grad<T>({&a_bar, &b_bar, &c, &d, &x});
  Tensor<T> result = detail::make_output<T>("ssm_scan", x.shape(), std::move(y), rg);
  if (rg) {
    tape.record("ssm_scan", [a_bar, b_bar, c, d, x, result, states = std::move(h), len, e,
                             s]() mutable {
      if (!result.has_grad()) return;
      const Index lanes = e * s;
      const auto gy = result.grad();
      const auto av = a_bar.data(), bv = b_bar.data(), cv = c.data(), dv = d.data();
      const auto xv = x.data();
      std::span<T> ga, gb, gc, gd, gx;
      if (wants_grad(a_bar)) ga = a_bar.grad_buffer();
      if (wants_grad(b_bar)) gb = b_bar.grad_buffer();
      if (wants_grad(c)) gc = c.grad_buffer();
      if (wants_grad(d)) gd = d.grad_buffer();
      if (wants_grad(x)) gx = x.grad_buffer();
      // Adjoint state: gh_t = C ⊙ gy_t + a ⊙ gh_{t+1}.
      Buffer<T> gh(static_cast<std::size_t>(lanes), T(0));
      for (Index t = len - 1; t >= 0; --t) {
        const T* ht = states.data() + t * lanes;
        const T* hprev = t > 0 ? states.data() + (t - 1) * lanes : nullptr;
        for (Index i = 0; i < e; ++i) {
          const T g = gy[t * e + i];
          const T xi = xv[t * e + i];
          T gx_acc = dv[i] * g;
          if (!gd.empty()) gd[i] += g * xi;
          for (Index j = 0; j < s; ++j) {
            const Index k = i * s + j;
            if (!gc.empty()) gc[k] += g * ht[k];
            gh[k] = cv[k] * g + av[k] * gh[k];
            if (!ga.empty() && hprev) ga[k] += gh[k] * hprev[k];
            if (!gb.empty()) gb[k] += gh[k] * xi;
            gx_acc += gh[k] * bv[k];
          }
          if (!gx.empty()) gx[t * e + i] += gx_acc;
        }
      }
    });
  }
  return result;
}

namespace {

template <typename T>
Tensor<T> identity_matrix(Index n) {
  Buffer<T> v(static_cast<std::size_t>(n * n), T(0));
  for (Index i = 0; i < n; ++i) v[i * n + i] = T(1);
  return Tensor<T>({n, n}, std::move(v), true);
}

template <typename T>
void fill(Tensor<T>& t, T value) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), value);
}

template <typename T>
void init_shared_parts(Index width, Rng& rng, Linear<T>& in_linear, Linear<T>& gate_linear,
                       Linear<T>& out_linear, Tensor<T>& conv_weight, Tensor<T>& conv_bias) {
  in_linear = Linear<T>(width, width, rng);
  gate_linear = Linear<T>(width, width, rng);
  out_linear = Linear<T>(width, width, rng);
  conv_weight = kaiming_uniform<T>({width, 3}, 3, rng);
  conv_bias = kaiming_uniform<T>({width}, 3, rng);
}

template <typename T>
void passthrough_parts(Index width, Linear<T>& in_linear, Linear<T>& gate_linear,
                       Linear<T>& out_linear, Tensor<T>& conv_weight, Tensor<T>& conv_bias) {
  in_linear.weight = identity_matrix<T>(width);
  fill(in_linear.bias, T(0));
  out_linear.weight = identity_matrix<T>(width);
  fill(out_linear.bias, T(0));
  fill(gate_linear.weight, T(0));
  fill(gate_linear.bias, T(0));
  fill(conv_weight, T(0));
  auto cw = conv_weight.mutable_data();
  for (Index i = 0; i < width; ++i) cw[i * 3 + 1] = T(1);
  fill(conv_bias, T(0));
}

template <typename T>
void passthrough_core(SSMParams<T>& p) {
  fill(p.c, T(0));
  fill(p.d, T(1));
}

}  // namespace

template <typename T>
BiRSSMBlock<T>::BiRSSMBlock(Index width_, Index state, Rng& rng) : width(width_) {
  init_shared_parts(width, rng, in_linear, gate_linear, out_linear, conv_weight, conv_bias);
  ssm = SSMParams<T>(width, state, rng);
}

template <typename T>
BiTrace<T> BiRSSMBlock<T>::forward_trace(Tape<T>& tape, const Tensor<T>& x_down) const {
  require(x_down.defined() && x_down.rank() == 2 && x_down.dim(1) == width,
          "BiR-SSM: input " + shape_str(x_down.shape()) + " does not match block width " +
              std::to_string(width));
  const Tensor<T> x_conv =
      ops::depthwise_conv1d(tape, in_linear.forward(tape, x_down), conv_weight, conv_bias);
  // One discretisation feeds both directions.
  const Discretized<T> core = discretize(tape, ssm);
  BiTrace<T> tr;
  tr.forward_pass =
      ops::silu(tape, ssm_scan(tape, core.a_bar, core.b_bar, ssm.c, ssm.d, x_conv, kernel));
  const Tensor<T> reversed = ops::reverse_seq(tape, tr.forward_pass);
  tr.reverse_pass =
      ops::silu(tape, ssm_scan(tape, core.a_bar, core.b_bar, ssm.c, ssm.d, reversed, kernel));
  const Tensor<T> gate = ops::silu(tape, gate_linear.forward(tape, x_down));
  const Tensor<T> restored = ops::reverse_seq(tape, tr.reverse_pass);
  tr.output = out_linear.forward(tape, ops::add(tape, restored, gate));
  return tr;
}

template <typename T>
Tensor<T> BiRSSMBlock<T>::forward(Tape<T>& tape, const Tensor<T>& x_down) const {
  return forward_trace(tape, x_down).output;
}

template <typename T>
void BiRSSMBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  in_linear.collect(prefix + ".in_linear", out);
  out.push_back({prefix + ".conv1d.weight", conv_weight, false});
  out.push_back({prefix + ".conv1d.bias", conv_bias, true});
  ssm.collect(prefix + ".ssm", out);
  gate_linear.collect(prefix + ".gate_linear", out);
  out_linear.collect(prefix + ".out_linear", out);
}

template <typename T>
Index BiRSSMBlock<T>::param_count() const {
  ParamList<T> ps;
  collect("", ps);
  return count_params(ps);
}

template <typename T>
void BiRSSMBlock<T>::set_passthrough() {
  passthrough_parts(width, in_linear, gate_linear, out_linear, conv_weight, conv_bias);
  passthrough_core(ssm);
}

template <typename T>
BiSSMBlock<T>::BiSSMBlock(Index width_, Index state, Rng& rng) : width(width_) {
  init_shared_parts(width, rng, in_linear, gate_linear, out_linear, conv_weight, conv_bias);
  ssm_fwd = SSMParams<T>(width, state, rng);
  ssm_bwd = SSMParams<T>(width, state, rng);
}

template <typename T>
BiTrace<T> BiSSMBlock<T>::forward_trace(Tape<T>& tape, const Tensor<T>& x_down) const {
  require(x_down.defined() && x_down.rank() == 2 && x_down.dim(1) == width,
          "Bi-SSM: input " + shape_str(x_down.shape()) + " does not match block width " +
              std::to_string(width));
  const Tensor<T> x_conv =
      ops::depthwise_conv1d(tape, in_linear.forward(tape, x_down), conv_weight, conv_bias);
  const Discretized<T> fwd = discretize(tape, ssm_fwd);
  const Discretized<T> bwd = discretize(tape, ssm_bwd);
  BiTrace<T> tr;
  tr.forward_pass = ops::silu(
      tape, ssm_scan(tape, fwd.a_bar, fwd.b_bar, ssm_fwd.c, ssm_fwd.d, x_conv, kernel));
  tr.reverse_pass = ops::silu(tape, ssm_scan(tape, bwd.a_bar, bwd.b_bar, ssm_bwd.c, ssm_bwd.d,
                                             ops::reverse_seq(tape, x_conv), kernel));
  const Tensor<T> merged =
      ops::add(tape, tr.forward_pass, ops::reverse_seq(tape, tr.reverse_pass));
  const Tensor<T> gate = ops::silu(tape, gate_linear.forward(tape, x_down));
  tr.output = out_linear.forward(tape, ops::add(tape, merged, gate));
  return tr;
}

template <typename T>
Tensor<T> BiSSMBlock<T>::forward(Tape<T>& tape, const Tensor<T>& x_down) const {
  return forward_trace(tape, x_down).output;
}

template <typename T>
void BiSSMBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  in_linear.collect(prefix + ".in_linear", out);
  out.push_back({prefix + ".conv1d.weight", conv_weight, false});
  out.push_back({prefix + ".conv1d.bias", conv_bias, true});
  ssm_fwd.collect(prefix + ".ssm_fwd", out);
  ssm_bwd.collect(prefix + ".ssm_bwd", out);
  gate_linear.collect(prefix + ".gate_linear", out);
  out_linear.collect(prefix + ".out_linear", out);
}

template <typename T>
Index BiSSMBlock<T>::param_count() const {
  ParamList<T> ps;
  collect("", ps);
  return count_params(ps);
}

template <typename T>
void BiSSMBlock<T>::set_passthrough() {
  passthrough_parts(width, in_linear, gate_linear, out_linear, conv_weight, conv_bias);
  passthrough_core(ssm_fwd);
  passthrough_core(ssm_bwd);
}

#define USKT_INSTANTIATE_SSM(T)                                                                \
  template struct SSMParams<T>;                                                                \
  template Discretized<T> discretize(Tape<T>&, const SSMParams<T>&);                           \
  template Discretized<T> discretize(const SSMParams<T>&);                                     \
  template void scan_states_sequential<T>(std::span<const T>, std::span<const T>,              \
                                          std::span<const T>, Index, Index, Index,             \
                                          std::span<T>);                                       \
  template void scan_states_parallel<T>(std::span<const T>, std::span<const T>,                \
                                        std::span<const T>, Index, Index, Index, std::span<T>, \
                                        int);                                                  \
  template void scan_readout<T>(std::span<const T>, std::span<const T>, std::span<const T>,    \
                                std::span<const T>, Index, Index, Index, std::span<T>);        \
  template Tensor<T> scan_sequential(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> scan_parallel(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                   const Tensor<T>&, const Tensor<T>&, int);                   \
  template Tensor<T> ssm_scan(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                              const Tensor<T>&, const Tensor<T>&, ScanKernel);                 \
  template class BiRSSMBlock<T>;                                                               \
  template class BiSSMBlock<T>;

USKT_INSTANTIATE_SSM(float)
USKT_INSTANTIATE_SSM(double)

#undef USKT_INSTANTIATE_SSM

}  // namespace uskt
