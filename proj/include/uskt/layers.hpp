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

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "uskt/tensor.hpp"

namespace uskt {

/// Seeded generator used for every initialisation and data synthesis path.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(gen_);
  }
  std::uint64_t next() { return gen_(); }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool is_bias = false;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
Index count_params(const ParamList<T>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

/// Gain that keeps activation variance roughly constant through ReLU-like units.
inline constexpr double kReluGain = 1.4142135623730951;
/// Gain giving b = 1/sqrt(fan_in), the usual default for linear layers and biases.
inline constexpr double kDefaultGain = 0.5773502691896258;

/// Uniform(-b, b) fill with b = gain * sqrt(3 / fan_in). Convolution weights
/// use kReluGain; linear layers and all biases use kDefaultGain.
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, Index fan_in, Rng& rng, double gain = kDefaultGain);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Index in_channels, Index out_channels, int kernel, int stride, int padding, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> weight, bias;
  int stride = 1;
  int padding = 0;
};

/// weight is C_in×C_out×k×k.
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(Index in_channels, Index out_channels, int kernel, int stride, int padding,
                  Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> weight, bias;
  int stride = 1;
  int padding = 0;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(Index in_features, Index out_features, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> weight, bias;
};

/// Largest group count <= 8 dividing `channels` with >= 2 channels per group.
Index default_groups(Index channels);

/// Affine group normalisation; weight starts at 1 and bias at 0.
template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  explicit GroupNorm(Index channels, Index groups = 0);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> weight, bias;
  Index groups = 1;
};

}  // namespace uskt
