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

#pragma once

// Diagonal state-space layers.
//
// Per channel e and state s the recurrence is
//   h_t = a_bar[e,s] * h_{t-1} + b_bar[e,s] * x_t[e],      h_{-1} = 0
//   y_t[e] = sum_s C[e,s] * h_t[e,s] + D[e] * x_t[e]
// with a_bar = exp(delta * A), b_bar = delta * B, A = -exp(A_log) and
// delta = exp(delta_log). A < 0 and delta > 0 give |a_bar| < 1.

#include <span>
#include <utility>
#include <vector>

#include "uskt/layers.hpp"
#include "uskt/tensor.hpp"

namespace uskt {

enum class ScanKernel { sequential, parallel };

/// Worker count for parallel kernels, read from USKT_THREADS (default 1).
int thread_count();

template <typename T>
struct SSMParams {
  Index width = 0;  // E
  Index state = 0;  // S
  Tensor<T> a_log;      // E×S
  Tensor<T> b;          // E×S
  Tensor<T> c;          // E×S
  Tensor<T> d;          // E
  Tensor<T> delta_log;  // E

  SSMParams() = default;
  SSMParams(Index width, Index state, Rng& rng);

  void collect(const std::string& prefix, ParamList<T>& out) const;
  /// 3·E·S + 2·E.
  Index param_count() const { return 3 * width * state + 2 * width; }
};

template <typename T>
struct Discretized {
  Tensor<T> a_bar;  // E×S
  Tensor<T> b_bar;  // E×S
};

/// a_bar = exp(delta ⊙ A), b_bar = delta ⊙ B. Differentiable w.r.t. a_log,
/// delta_log and b.
template <typename T>
Discretized<T> discretize(Tape<T>& tape, const SSMParams<T>& params);

template <typename T>
Discretized<T> discretize(const SSMParams<T>& params);

// Raw kernels over flat buffers: x is L×E, a_bar/b_bar are E×S and the hidden
// states h are written as L×E×S.
template <typename T>
void scan_states_sequential(std::span<const T> a_bar, std::span<const T> b_bar,
                            std::span<const T> x, Index length, Index width, Index state,
                            std::span<T> h);

/// Chunked associative scan over the affine maps h -> a*h + b, composed as
/// (a2*a1, a2*b1 + b2). Chunks run on up to `threads` workers.
template <typename T>
void scan_states_parallel(std::span<const T> a_bar, std::span<const T> b_bar,
                          std::span<const T> x, Index length, Index width, Index state,
                          std::span<T> h, int threads = 1);

/// y_t = C h_t + D x_t for all t.
template <typename T>
void scan_readout(std::span<const T> h, std::span<const T> c, std::span<const T> d,
                  std::span<const T> x, Index length, Index width, Index state, std::span<T> y);

/// Untracked reference scans returning an L×E tensor.
template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                          const Tensor<T>& d, const Tensor<T>& x);
template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& a_bar, const Tensor<T>& b_bar, const Tensor<T>& c,
                        const Tensor<T>& d, const Tensor<T>& x, int threads = 1);

/// Differentiable scan. The forward states come from `kernel`; the backward
/// pass is the reverse-time adjoint recurrence.
template <typename T>
Tensor<T> ssm_scan(Tape<T>& tape, const Tensor<T>& a_bar, const Tensor<T>& b_bar,
                   const Tensor<T>& c, const Tensor<T>& d, const Tensor<T>& x,
                   ScanKernel kernel = ScanKernel::sequential);

/// Intermediate outputs of a bidirectional block.
template <typename T>
struct BiTrace {
  Tensor<T> forward_pass;  // output of the forward-direction SSM branch
  Tensor<T> reverse_pass;  // output of the reverse-direction SSM branch (scan order)
  Tensor<T> output;
};

/// Bidirectional block whose forward and reverse scans share one SSM core.
template <typename T>
class BiRSSMBlock {
 public:
  BiRSSMBlock() = default;
  BiRSSMBlock(Index width, Index state, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x_down) const;
  BiTrace<T> forward_trace(Tape<T>& tape, const Tensor<T>& x_down) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  Index param_count() const;
  Index ssm_param_count() const { return ssm.param_count(); }

  /// C = 0, D = 1, identity linears and conv impulse, zero gate.
  void set_passthrough();

  Index width = 0;
  Linear<T> in_linear, gate_linear, out_linear;
  Tensor<T> conv_weight;  // E×3
  Tensor<T> conv_bias;    // E
  SSMParams<T> ssm;
  ScanKernel kernel = ScanKernel::sequential;
};

/// Baseline with independent forward and backward SSM cores.
template <typename T>
class BiSSMBlock {
 public:
  BiSSMBlock() = default;
  BiSSMBlock(Index width, Index state, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x_down) const;
  BiTrace<T> forward_trace(Tape<T>& tape, const Tensor<T>& x_down) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  Index param_count() const;
  Index ssm_param_count() const { return ssm_fwd.param_count() + ssm_bwd.param_count(); }

  void set_passthrough();

  Index width = 0;
  Linear<T> in_linear, gate_linear, out_linear;
  Tensor<T> conv_weight;
  Tensor<T> conv_bias;
  SSMParams<T> ssm_fwd, ssm_bwd;
  ScanKernel kernel = ScanKernel::sequential;
};

}  // namespace uskt
