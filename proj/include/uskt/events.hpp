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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uskt/tensor.hpp"

namespace uskt {

struct EventRecord {
  std::int32_t x = 0;  // column
  std::int32_t y = 0;  // row
  double t = 0.0;      // seconds
  std::int8_t p = 1;   // +1 or -1

  bool operator==(const EventRecord&) const = default;
};

/// Time-sorted events with their sensor bounds. Events satisfy
/// t_start <= t <= t_end; the closing boundary is inclusive so that a window
/// derived from the last timestamp still contains that event.
struct EventStream {
  std::vector<EventRecord> events;
  std::int32_t sensor_width = 0;
  std::int32_t sensor_height = 0;
  double t_start = 0.0;
  double t_end = 0.0;

  bool operator==(const EventStream&) const = default;
};

struct ParseOptions {
  bool zero_is_negative = false;  // map polarity 0 to -1 instead of rejecting it
  std::optional<double> t_start;
  std::optional<double> t_end;
};

/// Parses UTF-8 `x,y,t,p` lines (an optional header line is skipped).
EventStream parse_csv_events(const std::filesystem::path& path, std::int32_t sensor_width,
                             std::int32_t sensor_height, const ParseOptions& opts = {});
EventStream parse_csv_text(std::string_view text, std::int32_t sensor_width,
                           std::int32_t sensor_height, const ParseOptions& opts = {});
void write_csv_events(const std::filesystem::path& path, const EventStream& stream);

/// EVT1: "EVT1", u16 width, u16 height, u64 count, then count records of
/// u16 x, u16 y, f64 t, i8 p, i8 pad (14 bytes), all little-endian.
EventStream parse_evt_binary(const std::filesystem::path& path, const ParseOptions& opts = {});
EventStream parse_evt_bytes(std::string_view bytes, const ParseOptions& opts = {});
void write_evt_binary(const std::filesystem::path& path, const EventStream& stream);
std::string encode_evt(const EventStream& stream);

enum class Aggregation { sum, average };

Aggregation parse_aggregation(std::string_view name);

struct VoxelGrid {
  Index bins = 0;
  Index height = 0;
  Index width = 0;
  Aggregation aggregation = Aggregation::sum;
  std::vector<double> data;  // bins×height×width

  double at(Index k, Index y, Index x) const { return data[(k * height + y) * width + x]; }
  Index nonzero_count() const;
  template <typename T>
  Tensor<T> to_tensor() const;
};

/// Bin index k = floor(bins·(t - t_start)/(t_end - t_start)), with t = t_end
/// clamped into the last bin. Coordinates are rescaled to height×width by
/// nearest neighbour. Events outside [t_start, t_end] are ignored.
VoxelGrid voxelize(const EventStream& stream, Index bins, Index height, Index width,
                   Aggregation aggregation = Aggregation::sum);

enum class Pattern {
  horizontal_bar,     // moves down; +1 on the leading row, -1 on the trailing row
  vertical_bar,       // moves right
  diagonal_dot,       // square dot moving down-right
  expanding_square,   // square outline growing outwards
  rising_bar,         // horizontal bar moving up
  leftward_bar,       // vertical bar moving left
  antidiagonal_dot,   // dot moving down-left
  shrinking_square,   // outline contracting
};

constexpr int kPatternCount = 8;
std::string_view pattern_name(Pattern p);

struct SynthConfig {
  int classes = 3;
  int samples_per_class = 10;
  std::uint64_t seed = 42;
  Index bins = 5;
  Index height = 224;
  Index width = 224;
  double noise_rate = 0.0005;  // noise events per pixel per bin
};

struct LabeledGrid {
  VoxelGrid grid;
  int label = 0;
};

/// One event stream of `pattern` over the window [0, 1) on a height×width
/// sensor, with randomized placement, size and speed.
EventStream synth_pattern_events(Pattern pattern, Index bins, Index height, Index width,
                                 double noise_rate, std::uint64_t seed);

/// Class c uses Pattern(c). Samples are ordered class-major and fully
/// determined by the config.
std::vector<LabeledGrid> gen_synthetic_dataset(const SynthConfig& cfg);

}  // namespace uskt
