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


#include "uskt/bundle.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

namespace uskt {

using nlohmann::json;

void WeightBundle::add(std::string name, const Tensor<float>& tensor) {
  if (!tensor.defined()) throw FormatError("bundle entry '" + name + "' is undefined");
  if (contains(name)) throw FormatError("duplicate bundle entry '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(tensor);
}

bool WeightBundle::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor<float>& WeightBundle::get(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw FormatError("bundle has no entry '" + name + "'");
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

std::vector<BundleEntry> WeightBundle::layout() const {
  std::vector<BundleEntry> out;
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const std::uint64_t len = 4 * static_cast<std::uint64_t>(tensors_[i].numel());
    out.push_back({names_[i], tensors_[i].shape(), offset, len});
    offset += len;
  }
  return out;
}

std::filesystem::path bundle_blob_path(const std::filesystem::path& manifest) {
  std::filesystem::path p = manifest;
  p.replace_extension(".bin");
  return p;
}

void save_bundle(const std::filesystem::path& manifest, const WeightBundle& bundle) {
  const auto blob_path = bundle_blob_path(manifest);
  json entries = json::array();
  std::string blob;
  for (const auto& e : bundle.layout()) {
    entries.push_back({{"name", e.name},
                       {"dtype", "f32"},
                       {"shape", e.shape},
                       {"byte_offset", e.byte_offset},
                       {"byte_len", e.byte_len}});
  }
  for (const auto& t : bundle.tensors()) {
    for (float v : t.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) blob.push_back(static_cast<char>((bits >> (8 * k)) & 0xffu));
    }
  }
  const json doc = {{"format_version", WeightBundle::kFormatVersion},
                    {"blob", blob_path.filename().string()},
                    {"entries", entries},
                    {"config", bundle.config}};
  std::ofstream m(manifest, std::ios::binary | std::ios::trunc);
  if (!m) throw FormatError("cannot write " + manifest.string());
  m << doc.dump(2) << '\n';
  std::ofstream b(blob_path, std::ios::binary | std::ios::trunc);
  if (!b) throw FormatError("cannot write " + blob_path.string());
  b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!m || !b) throw FormatError("write failed for bundle " + manifest.string());
}

namespace {

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

WeightBundle load_bundle(const std::filesystem::path& manifest) {
  json doc;
  try {
    doc = json::parse(read_all(manifest));
  } catch (const json::exception& e) {
    throw FormatError(manifest.string() + ": invalid manifest: " + e.what());
  }
  const std::string where = manifest.string() + ": ";
  WeightBundle bundle;
  std::string blob;
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != WeightBundle::kFormatVersion) {
      throw FormatError(where + "unsupported format_version " + std::to_string(version));
    }
    std::filesystem::path blob_path = bundle_blob_path(manifest);
    if (doc.contains("blob")) blob_path = manifest.parent_path() / doc.at("blob").get<std::string>();
    blob = read_all(blob_path);
    if (doc.contains("config")) bundle.config = doc.at("config");

    std::uint64_t expected_end = 0;
    std::vector<BundleEntry> entries;
    for (const auto& e : doc.at("entries")) {
      BundleEntry be;
      be.name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != "f32") {
        throw FormatError(where + "entry '" + be.name + "' has unsupported dtype");
      }
      be.shape = e.at("shape").get<Shape>();
      be.byte_offset = e.at("byte_offset").get<std::uint64_t>();
      be.byte_len = e.at("byte_len").get<std::uint64_t>();
      for (Index d : be.shape) {
        if (d <= 0) throw FormatError(where + "entry '" + be.name + "' has a non-positive extent");
      }
      if (be.byte_len != 4 * static_cast<std::uint64_t>(numel(be.shape))) {
        throw FormatError(where + "entry '" + be.name + "' byte_len " +
                          std::to_string(be.byte_len) + " does not match shape " +
                          shape_str(be.shape));
      }
      if (be.byte_offset < expected_end) {
        throw FormatError(where + "entry '" + be.name + "' overlaps or precedes the previous entry");
      }
      expected_end = be.byte_offset + be.byte_len;
      entries.push_back(std::move(be));
    }
    if (blob.size() != expected_end) {
      throw FormatError(where + "corrupt blob: expected " + std::to_string(expected_end) +
                        " bytes, found " + std::to_string(blob.size()));
    }
    for (const auto& be : entries) {
      std::vector<float> values(be.byte_len / 4);
      const auto* src = reinterpret_cast<const unsigned char*>(blob.data() + be.byte_offset);
      for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(src[4 * i + k]) << (8 * k);
        values[i] = std::bit_cast<float>(bits);
      }
      bundle.add(be.name, Tensor<float>(be.shape, std::move(values)));
    }
  } catch (const json::exception& e) {
    throw FormatError(where + "invalid manifest: " + e.what());
  }
  return bundle;
}

WeightBundle model_to_bundle(const Model<float>& model, json config) {
  WeightBundle b;
  b.config = std::move(config);
  for (const auto& p : model.parameters()) b.add(p.name, p.tensor);
  return b;
}

void load_model_weights(Model<float>& model, const WeightBundle& bundle) {
  const auto params = model.parameters();
  for (const auto& p : params) {
    if (!bundle.contains(p.name)) throw FormatError("bundle is missing entry '" + p.name + "'");
    const auto& src = bundle.get(p.name);
    if (src.shape() != p.tensor.shape()) {
      throw FormatError("bundle entry '" + p.name + "' has shape " + shape_str(src.shape()) +
                        ", model expects " + shape_str(p.tensor.shape()));
    }
  }
  if (bundle.size() != params.size()) {
    for (const auto& n : bundle.names()) {
      bool known = std::any_of(params.begin(), params.end(),
                               [&](const NamedParam<float>& p) { return p.name == n; });
      if (!known) throw FormatError("bundle entry '" + n + "' does not belong to this model");
    }
  }
  for (const auto& p : params) {
    const auto src = bundle.get(p.name).data();
    auto dst = p.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::uint64_t checksum(std::span<const float> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int k = 0; k < 4; ++k) {
      h ^= (bits >> (8 * k)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::uint64_t checksum(const ParamList<float>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    h ^= checksum(p.tensor.data());
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace uskt
