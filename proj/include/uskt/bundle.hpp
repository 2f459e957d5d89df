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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uskt/net.hpp"
#include "uskt/tensor.hpp"

namespace uskt {

struct BundleEntry {
  std::string name;
  Shape shape;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_len = 0;
};

/// Named f32 tensors plus a free-form config echo. On disk: a JSON manifest
/// and a sibling blob of little-endian floats (model.json + model.bin).
class WeightBundle {
 public:
  static constexpr int kFormatVersion = 1;

  void add(std::string name, const Tensor<float>& tensor);
  bool contains(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor<float>>& tensors() const { return tensors_; }
  std::size_t size() const { return names_.size(); }

  /// Entries with offsets assigned in insertion order.
  std::vector<BundleEntry> layout() const;

  nlohmann::json config = nlohmann::json::object();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<float>> tensors_;
};

/// Blob path for a manifest path: same stem, ".bin" extension.
std::filesystem::path bundle_blob_path(const std::filesystem::path& manifest);

/// Writes manifest and blob. Throws FormatError if either cannot be written.
void save_bundle(const std::filesystem::path& manifest, const WeightBundle& bundle);

/// Reads and validates a bundle. Throws FormatError on malformed manifests,
/// overlapping or unordered entries, and blob length disagreements.
WeightBundle load_bundle(const std::filesystem::path& manifest);

/// Bundle holding every parameter of the model under its parameter name.
WeightBundle model_to_bundle(const Model<float>& model, nlohmann::json config);

/// Copies bundle tensors into the model. Every model parameter must be
/// present with an identical shape; otherwise FormatError naming the entry.
void load_model_weights(Model<float>& model, const WeightBundle& bundle);

/// FNV-1a over the raw bytes of the values.
std::uint64_t checksum(std::span<const float> values);
std::uint64_t checksum(const ParamList<float>& params);

}  // namespace uskt
