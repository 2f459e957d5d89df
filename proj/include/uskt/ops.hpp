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

#include "uskt/tensor.hpp"

// Differentiable primitives. Every op validates shapes, computes its output,
// checks it for NaN/Inf and, when any operand requires grad, appends a
// backward closure to the tape. Image-like tensors are unbatched C×H×W.
namespace uskt::ops {

/// 2-D cross-correlation with zero padding. weight is C_out×C_in×k×k; bias may
/// be an undefined tensor.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding);

/// Transposed convolution (the adjoint of conv2d). weight is C_in×C_out×k×k.
template <typename T>
Tensor<T> conv_transpose2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, int stride, int padding);

/// Affine map over the last axis. weight is F_out×F_in.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias);

template <typename T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product of equal-shaped tensors.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& input);

/// sum(input ⊙ weights) with `weights` treated as a constant.
template <typename T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights);

/// 2× bilinear upsampling, half-pixel centres (align_corners = false).
template <typename T>
Tensor<T> bilinear_upsample2x(Tape<T>& tape, const Tensor<T>& input);

/// Non-overlapping k×k mean pooling; k must divide H and W.
template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& input, int k);

/// C×H×W -> [C] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input);

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// Reverses the rows of an L×E sequence.
template <typename T>
Tensor<T> reverse_seq(Tape<T>& tape, const Tensor<T>& input);

/// C×H×W -> (H·W)×C, row-major over (H, W).
template <typename T>
Tensor<T> flatten_spatial(Tape<T>& tape, const Tensor<T>& input);

/// (H·W)×C -> C×H×W.
template <typename T>
Tensor<T> unflatten_spatial(Tape<T>& tape, const Tensor<T>& input, Index height, Index width);

/// Per-channel convolution along the sequence axis of an L×E tensor. weight is
/// E×k with odd k, zero padded to keep length L.
template <typename T>
Tensor<T> depthwise_conv1d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias);

/// Mean of squared differences over all elements.
/// Per-sample group normalisation of a C×H×W tensor: channels split into
/// `groups` contiguous groups, each standardised with its biased variance,
/// then scaled by gamma[c] and shifted by beta[c].
template <typename T>
Tensor<T> group_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Index groups, double eps = 1e-5);

template <typename T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

}  // namespace uskt::ops
