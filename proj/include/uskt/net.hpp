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

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uskt/layers.hpp"
#include "uskt/ssm.hpp"

namespace uskt {

/// Records (stage name, output shape) pairs as a forward pass runs.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> stages;
  void add(std::string name, const Shape& s) { stages.emplace_back(std::move(name), s); }
};

/// conv3x3/s1 -> GN -> SiLU -> conv3x3/s2 -> GN on the main branch,
/// conv1x1/s2 on the residual branch, SiLU after the sum. Halves the
/// spatial extent.
template <typename T>
class DownBlock {
 public:
  DownBlock() = default;
  DownBlock(Index in_channels, Index out_channels, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Conv2d<T> conv1, conv2, residual;
  GroupNorm<T> norm1, norm2;
};

/// Bilinear 2x -> conv3x3 -> GN -> SiLU -> conv1x1 -> GN -> SiLU,
/// concatenated with the skip feature of the same scale, then a 1x1 fusion
/// conv.
template <typename T>
class UpBlock {
 public:
  UpBlock() = default;
  UpBlock(Index in_channels, Index skip_channels, Index out_channels, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& skip) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Conv2d<T> conv3, conv1, fusion;
  GroupNorm<T> norm3, norm1;
  Index skip_channels = 0;
};

struct USKTConfig {
  Index in_bins = 5;
  Index proj_channels = 12;
  std::array<Index, 4> down_channels{32, 64, 128, 128};
  int ssm_layers = 1;
  Index state_size = 16;
  Index out_channels = 3;
  Index input_hw = 224;

  void validate() const;
};

/// The U-shaped adapter: projection, 4 residual down blocks, 2x2 average
/// pooling, BiR-SSM layers on the flattened bottleneck, 5 residual up blocks
/// and an optional 1x1 conv to `out_channels`.
template <typename T>
class USKT {
 public:
  USKT() = default;
  USKT(const USKTConfig& cfg, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, ShapeTrace* trace = nullptr) const;
  Tensor<T> project(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  USKTConfig config;
  Conv2d<T> proj;
  std::array<DownBlock<T>, 4> downs;
  std::vector<BiRSSMBlock<T>> ssm_blocks;
  std::array<UpBlock<T>, 5> ups;
  std::optional<Conv2d<T>> to_rgb;
};

enum class AdapterKind { uskt, conv1, conv2, none };

AdapterKind parse_adapter(std::string_view name);
std::string_view adapter_name(AdapterKind kind);

/// Maps a T-bin voxel tensor to a 3-channel image for the encoder.
template <typename T>
class Adapter {
 public:
  Adapter() = default;
  Adapter(AdapterKind kind, const USKTConfig& cfg, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, ShapeTrace* trace = nullptr) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  AdapterKind kind = AdapterKind::uskt;
  USKTConfig config;
  std::optional<USKT<T>> uskt;
  std::vector<Conv2d<T>> convs;
};

struct EncoderConfig {
  std::array<Index, 5> channels{16, 32, 64, 128, 128};
  Index input_hw = 224;
};

/// Five stride-2 3x3 conv + GN stages with SiLU between them; a stand-in for
/// a pretrained RGB backbone. In frozen mode only the biases (conv and norm)
/// are trainable.
template <typename T>
class TinyConvEncoder {
 public:
  TinyConvEncoder() = default;
  TinyConvEncoder(const EncoderConfig& cfg, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }
  Index out_channels() const { return config.channels.back(); }

  EncoderConfig config;
  std::array<Conv2d<T>, 5> stages;
  std::array<GroupNorm<T>, 5> norms;

 private:
  bool frozen_ = false;
};

/// Five kernel-4 stride-2 transposed convs, D_enc -> 64 -> 32 -> 16 -> 8 -> 3.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(Index in_channels, Rng& rng, std::vector<Index> widths = {64, 32, 16, 8, 3});

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  std::vector<ConvTranspose2d<T>> stages;
};

/// Global average pool followed by a linear layer.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(Index in_channels, Index num_classes, Rng& rng);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& features) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Linear<T> fc;
};

struct ModelConfig {
  USKTConfig uskt;
  AdapterKind adapter = AdapterKind::uskt;
  EncoderConfig encoder;
  int num_classes = 3;
  bool frozen = true;
};

/// Outputs of one full forward pass.
template <typename T>
struct ModelOutput {
  Tensor<T> x_uskt;   // adapter output, 3×H×W
  Tensor<T> x_enc;    // encoder features, D_enc×7×7
  Tensor<T> logits;   // [K]
  Tensor<T> x_rec;    // decoder output, 3×H×W (undefined when skipped)
};

/// Adapter + encoder + decoder + classification head. Parameter names are
/// prefixed with their group: adapter., encoder., decoder., head.
template <typename T>
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  ModelOutput<T> forward(Tape<T>& tape, const Tensor<T>& voxels, bool with_decoder = true,
                         ShapeTrace* trace = nullptr) const;
  ParamList<T> parameters() const;

  ModelConfig config;
  Adapter<T> adapter;
  TinyConvEncoder<T> encoder;
  Decoder<T> decoder;
  ClassifierHead<T> head;
};

/// Independent stream seed for one component of a run. Each model component
/// draws from its own stream so that, for one seed, the encoder/decoder/head
/// weights do not depend on the adapter variant.
std::uint64_t component_seed(std::uint64_t seed, std::uint64_t component);

/// The group prefix of a parameter name ("adapter", "encoder", ...).
std::string param_group(const std::string& name);

}  // namespace uskt
