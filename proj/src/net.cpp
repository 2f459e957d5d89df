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

#include "uskt/net.hpp"

#include "detail.hpp"
#include "uskt/ops.hpp"

namespace uskt {

using detail::require;

template <typename T>
DownBlock<T>::DownBlock(Index in_channels, Index out_channels, Rng& rng)
    : conv1(in_channels, out_channels, 3, 1, 1, rng),
      conv2(out_channels, out_channels, 3, 2, 1, rng),
      residual(in_channels, out_channels, 1, 2, 0, rng),
      norm1(out_channels),
      norm2(out_channels) {}

template <typename T>
Tensor<T> DownBlock<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  require(x.defined() && x.rank() == 3, "down block: expected a C×N×N input");
  require(x.dim(1) % 2 == 0 && x.dim(2) % 2 == 0,
          "down block: spatial extent must be even, got " + shape_str(x.shape()));
  const Tensor<T> x_conv1 = ops::silu(tape, norm1.forward(tape, conv1.forward(tape, x)));
  const Tensor<T> x_conv2 = norm2.forward(tape, conv2.forward(tape, x_conv1));
  const Tensor<T> x_res = residual.forward(tape, x);
  return ops::silu(tape, ops::add(tape, x_conv2, x_res));
}

template <typename T>
void DownBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
  norm2.collect(prefix + ".norm2", out);
  residual.collect(prefix + ".residual", out);
}

template <typename T>
UpBlock<T>::UpBlock(Index in_channels, Index skip_channels_, Index out_channels, Rng& rng)
    : conv3(in_channels, out_channels, 3, 1, 1, rng),
      conv1(out_channels, out_channels, 1, 1, 0, rng),
      fusion(out_channels + skip_channels_, out_channels, 1, 1, 0, rng),
      norm3(out_channels),
      norm1(out_channels),
      skip_channels(skip_channels_) {}

template <typename T>
Tensor<T> UpBlock<T>::forward(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& skip) const {
  require(x.defined() && x.rank() == 3, "up block: expected a C×N×N input");
  const Shape expected{skip_channels, 2 * x.dim(1), 2 * x.dim(2)};
  require(skip.defined() && skip.shape() == expected,
          "up block: skip feature must be " + shape_str(expected) + ", got " +
              (skip.defined() ? shape_str(skip.shape()) : std::string("undefined")));
  const Tensor<T> up = ops::bilinear_upsample2x(tape, x);
  const Tensor<T> feat = ops::silu(tape, norm3.forward(tape, conv3.forward(tape, up)));
  const Tensor<T> x_up = ops::silu(tape, norm1.forward(tape, conv1.forward(tape, feat)));
  return fusion.forward(tape, ops::concat_channels(tape, x_up, skip));
}

template <typename T>
void UpBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv3.collect(prefix + ".conv3", out);
  norm3.collect(prefix + ".norm3", out);
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  fusion.collect(prefix + ".fusion", out);
}

void USKTConfig::validate() const {
  if (in_bins < 1) throw FormatError("in_bins must be >= 1");
  if (proj_channels < 1 || out_channels < 1 || state_size < 1) {
    throw FormatError("channel counts and state_size must be >= 1");
  }
  for (Index c : down_channels) {
    if (c < 1) throw FormatError("down_channels entries must be >= 1");
  }
  if (ssm_layers < 0) throw FormatError("ssm_layers must be >= 0");
  if (input_hw < 32 || input_hw % 32 != 0) {
    throw FormatError("input_hw must be a positive multiple of 32, got " + std::to_string(input_hw));
  }
}

template <typename T>
USKT<T>::USKT(const USKTConfig& cfg, Rng& rng) : config(cfg) {
  cfg.validate();
  const auto& dc = cfg.down_channels;
  proj = Conv2d<T>(cfg.in_bins, cfg.proj_channels, 3, 1, 1, rng);
  Index in = cfg.proj_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    downs[i] = DownBlock<T>(in, dc[i], rng);
    in = dc[i];
  }
  for (int i = 0; i < cfg.ssm_layers; ++i) ssm_blocks.emplace_back(dc[3], cfg.state_size, rng);
  // Skips, deepest first: X_down4, X_down3, X_down2, X_down1, X_proj.
  const std::array<Index, 5> skip{dc[3], dc[2], dc[1], dc[0], cfg.proj_channels};
  Index cur = dc[3];
  for (std::size_t i = 0; i < 5; ++i) {
    ups[i] = UpBlock<T>(cur, skip[i], skip[i], rng);
    cur = skip[i];
  }
  if (cfg.proj_channels != cfg.out_channels) {
    to_rgb = Conv2d<T>(cfg.proj_channels, cfg.out_channels, 1, 1, 0, rng);
  }
}

template <typename T>
Tensor<T> USKT<T>::project(Tape<T>& tape, const Tensor<T>& x) const {
  require(x.defined() && x.rank() == 3, "USKT: expected a T×H×W voxel tensor");
  require(x.dim(0) == config.in_bins,
          "USKT: input has " + std::to_string(x.dim(0)) + " time bins, model expects " +
              std::to_string(config.in_bins));
  require(x.dim(1) == config.input_hw && x.dim(2) == config.input_hw,
          "USKT: input " + shape_str(x.shape()) + " does not match input_hw " +
              std::to_string(config.input_hw));
  return proj.forward(tape, x);
}

template <typename T>
Tensor<T> USKT<T>::forward(Tape<T>& tape, const Tensor<T>& x, ShapeTrace* trace) const {
  auto note = [&](const char* name, const Tensor<T>& t) {
    if (trace) trace->add(name, t.shape());
  };
  note("input", x);
  const Tensor<T> x_proj = project(tape, x);
  note("proj", x_proj);
  std::array<Tensor<T>, 4> x_down;
  Tensor<T> cur = x_proj;
  static constexpr const char* kDownNames[4] = {"down1", "down2", "down3", "down4"};
  for (std::size_t i = 0; i < 4; ++i) {
    x_down[i] = downs[i].forward(tape, cur);
    note(kDownNames[i], x_down[i]);
    cur = x_down[i];
  }
  const Tensor<T> pooled = ops::avg_pool2d(tape, x_down[3], 2);
  note("pool", pooled);
  Tensor<T> seq = ops::flatten_spatial(tape, pooled);
  note("sequence", seq);
  for (const auto& block : ssm_blocks) {
    seq = block.forward(tape, seq);
    note("bir_ssm", seq);
  }
  cur = ops::unflatten_spatial(tape, seq, pooled.dim(1), pooled.dim(2));
  note("ssm_out", cur);
  const std::array<Tensor<T>, 5> skips{x_down[3], x_down[2], x_down[1], x_down[0], x_proj};
  static constexpr const char* kUpNames[5] = {"up1", "up2", "up3", "up4", "up5"};
  for (std::size_t i = 0; i < 5; ++i) {
    cur = ups[i].forward(tape, cur, skips[i]);
    note(kUpNames[i], cur);
  }
  if (to_rgb) {
    cur = to_rgb->forward(tape, cur);
    note("to_rgb", cur);
  }
  return cur;
}

template <typename T>
void USKT<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  proj.collect(prefix + ".proj", out);
  for (std::size_t i = 0; i < 4; ++i) downs[i].collect(prefix + ".down" + std::to_string(i + 1), out);
  for (std::size_t i = 0; i < ssm_blocks.size(); ++i) {
    ssm_blocks[i].collect(prefix + ".bir_ssm" + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < 5; ++i) ups[i].collect(prefix + ".up" + std::to_string(i + 1), out);
  if (to_rgb) to_rgb->collect(prefix + ".to_rgb", out);
}

AdapterKind parse_adapter(std::string_view name) {
  if (name == "uskt") return AdapterKind::uskt;
  if (name == "conv1") return AdapterKind::conv1;
  if (name == "conv2") return AdapterKind::conv2;
  if (name == "none") return AdapterKind::none;
  throw FormatError("unknown adapter '" + std::string(name) + "' (expected uskt, conv1, conv2 or none)");
}

std::string_view adapter_name(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::uskt: return "uskt";
    case AdapterKind::conv1: return "conv1";
    case AdapterKind::conv2: return "conv2";
    case AdapterKind::none: return "none";
  }
  return "unknown";
}

template <typename T>
Adapter<T>::Adapter(AdapterKind kind_, const USKTConfig& cfg, Rng& rng) : kind(kind_), config(cfg) {
  switch (kind) {
    case AdapterKind::uskt:
      uskt.emplace(cfg, rng);
      break;
    case AdapterKind::conv1:
      convs.emplace_back(cfg.in_bins, cfg.out_channels, 3, 1, 1, rng);
      break;
    case AdapterKind::conv2:
      convs.emplace_back(cfg.in_bins, cfg.proj_channels, 3, 1, 1, rng);
      convs.emplace_back(cfg.proj_channels, cfg.out_channels, 3, 1, 1, rng);
      break;
    case AdapterKind::none:
      if (cfg.in_bins != cfg.out_channels) {
        throw ShapeError("adapter 'none' needs in_bins == " + std::to_string(cfg.out_channels) +
                         ", got " + std::to_string(cfg.in_bins));
      }
      break;
  }
}

template <typename T>
Tensor<T> Adapter<T>::forward(Tape<T>& tape, const Tensor<T>& x, ShapeTrace* trace) const {
  if (uskt) return uskt->forward(tape, x, trace);
  require(x.defined() && x.rank() == 3 && x.dim(0) == config.in_bins,
          "adapter: input " + (x.defined() ? shape_str(x.shape()) : std::string("undefined")) +
              " does not have " + std::to_string(config.in_bins) + " time bins");
  if (kind == AdapterKind::none) return x;
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    if (i > 0) cur = ops::silu(tape, cur);
    cur = convs[i].forward(tape, cur);
  }
  if (trace) trace->add("adapter", cur.shape());
  return cur;
}

template <typename T>
void Adapter<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  if (uskt) uskt->collect(prefix + ".uskt", out);
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i + 1), out);
}

template <typename T>
TinyConvEncoder<T>::TinyConvEncoder(const EncoderConfig& cfg, Rng& rng) : config(cfg) {
  Index in = 3;
  for (std::size_t i = 0; i < 5; ++i) {
    stages[i] = Conv2d<T>(in, cfg.channels[i], 3, 2, 1, rng);
    norms[i] = GroupNorm<T>(cfg.channels[i]);
    in = cfg.channels[i];
  }
}

template <typename T>
Tensor<T> TinyConvEncoder<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  require(x.defined() && x.rank() == 3 && x.dim(0) == 3 && x.dim(1) == config.input_hw &&
              x.dim(2) == config.input_hw,
          "encoder: expected a 3×" + std::to_string(config.input_hw) + "×" +
              std::to_string(config.input_hw) + " input, got " +
              (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < 5; ++i) {
    cur = norms[i].forward(tape, stages[i].forward(tape, cur));
    if (i + 1 < 5) cur = ops::silu(tape, cur);
  }
  return cur;
}

template <typename T>
void TinyConvEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t i = 0; i < 5; ++i) {
    stages[i].collect(prefix + ".stage" + std::to_string(i + 1), out);
    norms[i].collect(prefix + ".norm" + std::to_string(i + 1), out);
  }
}

template <typename T>
void TinyConvEncoder<T>::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (std::size_t i = 0; i < 5; ++i) {
    stages[i].weight.set_requires_grad(!frozen);
    stages[i].bias.set_requires_grad(true);
    norms[i].weight.set_requires_grad(!frozen);
    norms[i].bias.set_requires_grad(true);
  }
}

template <typename T>
Decoder<T>::Decoder(Index in_channels, Rng& rng, std::vector<Index> widths) {
  Index in = in_channels;
  for (Index w : widths) {
    stages.emplace_back(in, w, 4, 2, 1, rng);
    in = w;
  }
}

template <typename T>
Tensor<T> Decoder<T>::forward(Tape<T>& tape, const Tensor<T>& x) const {
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    cur = stages[i].forward(tape, cur);
    if (i + 1 < stages.size()) cur = ops::silu(tape, cur);
  }
  return cur;
}

template <typename T>
void Decoder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].collect(prefix + ".deconv" + std::to_string(i + 1), out);
  }
}

template <typename T>
ClassifierHead<T>::ClassifierHead(Index in_channels, Index num_classes, Rng& rng)
    : fc(in_channels, num_classes, rng) {}

template <typename T>
Tensor<T> ClassifierHead<T>::forward(Tape<T>& tape, const Tensor<T>& features) const {
  return fc.forward(tape, ops::global_avg_pool(tape, features));
}

template <typename T>
void ClassifierHead<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  fc.collect(prefix + ".fc", out);
}

std::uint64_t component_seed(std::uint64_t seed, std::uint64_t component) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + component * 0xd1b54a32d192ed03ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  if (cfg.num_classes < 2) throw FormatError("num_classes must be >= 2");
  if (cfg.encoder.input_hw != cfg.uskt.input_hw) {
    throw FormatError("encoder input_hw must match the adapter input_hw");
  }
  Rng adapter_rng(component_seed(seed, 1));
  Rng encoder_rng(component_seed(seed, 2));
  Rng decoder_rng(component_seed(seed, 3));
  Rng head_rng(component_seed(seed, 4));
  adapter = Adapter<T>(cfg.adapter, cfg.uskt, adapter_rng);
  encoder = TinyConvEncoder<T>(cfg.encoder, encoder_rng);
  encoder.set_frozen(cfg.frozen);
  decoder = Decoder<T>(encoder.out_channels(), decoder_rng);
  head = ClassifierHead<T>(encoder.out_channels(), cfg.num_classes, head_rng);
}

template <typename T>
ModelOutput<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& voxels, bool with_decoder,
                                 ShapeTrace* trace) const {
  ModelOutput<T> out;
  out.x_uskt = adapter.forward(tape, voxels, trace);
  if (trace) trace->add("x_uskt", out.x_uskt.shape());
  out.x_enc = encoder.forward(tape, out.x_uskt);
  if (trace) trace->add("x_enc", out.x_enc.shape());
  out.logits = head.forward(tape, out.x_enc);
  if (with_decoder) {
    out.x_rec = decoder.forward(tape, out.x_enc);
    if (trace) trace->add("x_rec", out.x_rec.shape());
  }
  return out;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> ps;
  adapter.collect("adapter", ps);
  encoder.collect("encoder", ps);
  decoder.collect("decoder", ps);
  head.collect("head", ps);
  return ps;
}

std::string param_group(const std::string& name) { return name.substr(0, name.find('.')); }

template class DownBlock<float>;
template class DownBlock<double>;
template class UpBlock<float>;
template class UpBlock<double>;
template class USKT<float>;
template class USKT<double>;
template class Adapter<float>;
template class Adapter<double>;
template class TinyConvEncoder<float>;
template class TinyConvEncoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;
template class Model<float>;
template class Model<double>;

}  // namespace uskt
