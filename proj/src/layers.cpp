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

#include "uskt/layers.hpp"

#include <algorithm>
#include <cmath>

#include "uskt/ops.hpp"

namespace uskt {

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, Index fan_in, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  Buffer<T> v(static_cast<std::size_t>(numel(shape)));
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Conv2d<T>::Conv2d(Index in_channels, Index out_channels, int kernel, int stride_, int padding_,
                  Rng& rng)
    : stride(stride_), padding(padding_) {
  const Index fan_in = in_channels * kernel * kernel;
  weight = kaiming_uniform<T>({out_channels, in_channels, kernel, kernel}, fan_in, rng, kReluGain);
  bias = kaiming_uniform<T>({out_channels}, fan_in, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::conv2d(tape, x, weight, bias, stride, padding);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight, false});
  out.push_back({prefix + ".bias", bias, true});
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(Index in_channels, Index out_channels, int kernel,
                                    int stride_, int padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
  // Same fan-in convention as torch for transposed convolutions (weight dim 1).
  const Index fan_in = out_channels * kernel * kernel;
  weight = kaiming_uniform<T>({in_channels, out_channels, kernel, kernel}, fan_in, rng, kReluGain);
  bias = kaiming_uniform<T>({out_channels}, fan_in, rng);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::conv_transpose2d(tape, x, weight, bias, stride, padding);
}

template <typename T>
void ConvTranspose2d<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight, false});
  out.push_back({prefix + ".bias", bias, true});
}

template <typename T>
Linear<T>::Linear(Index in_features, Index out_features, Rng& rng) {
  weight = kaiming_uniform<T>({out_features, in_features}, in_features, rng);
  bias = kaiming_uniform<T>({out_features}, in_features, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::linear(tape, x, weight, bias);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight, false});
  out.push_back({prefix + ".bias", bias, true});
}

Index default_groups(Index channels) {
  // At least two channels per group; a lone channel would cancel the bias
  // of the conv feeding it.
  for (Index g = std::min<Index>(8, channels / 2); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

template <typename T>
GroupNorm<T>::GroupNorm(Index channels, Index groups_)
    : weight(Tensor<T>::full({channels}, T(1), true)),
      bias(Tensor<T>::zeros({channels}, true)),
      groups(groups_ > 0 ? groups_ : default_groups(channels)) {}

template <typename T>
Tensor<T> GroupNorm<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  return ops::group_norm(tape, x, weight, bias, groups);
}

template <typename T>
void GroupNorm<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight, false});
  out.push_back({prefix + ".bias", bias, true});
}

template Tensor<float> kaiming_uniform<float>(Shape, Index, Rng&, double);
template Tensor<double> kaiming_uniform<double>(Shape, Index, Rng&, double);
template class GroupNorm<float>;
template class GroupNorm<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class ConvTranspose2d<float>;
template class ConvTranspose2d<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace uskt
