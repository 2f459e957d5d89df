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

#include "uskt/events.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "uskt/layers.hpp"

namespace uskt {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename V>
bool parse_number(std::string_view s, V& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::int8_t checked_polarity(long raw, bool zero_is_negative, const std::string& where) {
  if (raw == 1) return 1;
  if (raw == -1) return -1;
  if (raw == 0) {
    if (zero_is_negative) return -1;
    throw FormatError(where + ": polarity 0 is only accepted with --zero-is-negative");
  }
  throw FormatError(where + ": polarity " + std::to_string(raw) + " is not one of 1, -1, 0");
}

void finish_stream(EventStream& s, const ParseOptions& opts) {
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
  if (s.events.empty()) {
    s.t_start = opts.t_start.value_or(0.0);
    s.t_end = opts.t_end.value_or(0.0);
    return;
  }
  s.t_start = opts.t_start.value_or(s.events.front().t);
  s.t_end = opts.t_end.value_or(s.events.back().t);
  if (s.t_end < s.t_start) throw FormatError("time window ends before it starts");
}

void check_bounds(const EventRecord& e, std::int32_t w, std::int32_t h, std::size_t index) {
  if (e.x < 0 || e.y < 0 || e.x >= w || e.y >= h) {
    throw FormatError("event record " + std::to_string(index) + " at (" + std::to_string(e.x) +
                      ", " + std::to_string(e.y) + ") lies outside the " + std::to_string(w) +
                      "x" + std::to_string(h) + " sensor");
  }
}

template <typename V>
void put_le(std::string& out, V v) {
  static_assert(std::endian::native == std::endian::little, "EVT1 codec assumes a little-endian host");
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

template <typename V>
V get_le(std::string_view bytes, std::size_t offset) {
  V v;
  std::memcpy(&v, bytes.data() + offset, sizeof(V));
  return v;
}

constexpr std::size_t kEvtHeader = 4 + 2 + 2 + 8;
constexpr std::size_t kEvtRecord = 14;

}  // namespace

EventStream parse_csv_text(std::string_view text, std::int32_t sensor_width,
                           std::int32_t sensor_height, const ParseOptions& opts) {
  EventStream s;
  s.sensor_width = sensor_width;
  s.sensor_height = sensor_height;
  std::size_t line_no = 0;
  bool seen_content = false;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;
    std::string_view fields[4];
    std::size_t n = 0;
    std::string_view rest = line;
    while (n < 4) {
      const std::size_t comma = rest.find(',');
      fields[n++] = rest.substr(0, comma);
      if (comma == std::string_view::npos) {
        rest = {};
        break;
      }
      rest = rest.substr(comma + 1);
    }
    const std::string where = "line " + std::to_string(line_no);
    EventRecord e;
    long pol = 0;
    const bool ok = n == 4 && rest.empty() && parse_number(fields[0], e.x) &&
                    parse_number(fields[1], e.y) && parse_number(fields[2], e.t) &&
                    parse_number(fields[3], pol) && std::isfinite(e.t);
    if (!ok) {
      double probe;
      if (!seen_content && !parse_number(fields[0], probe)) {
        seen_content = true;  // header row
        continue;
      }
      throw FormatError(where + ": expected x,y,t,p but got '" + std::string(line) + "'");
    }
    seen_content = true;
    e.p = checked_polarity(pol, opts.zero_is_negative, where);
    check_bounds(e, sensor_width, sensor_height, s.events.size());
    s.events.push_back(e);
  }
  finish_stream(s, opts);
  return s;
}

EventStream parse_csv_events(const std::filesystem::path& path, std::int32_t sensor_width,
                             std::int32_t sensor_height, const ParseOptions& opts) {
  return parse_csv_text(read_file(path), sensor_width, sensor_height, opts);
}

void write_csv_events(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  for (const auto& e : stream.events) {
    out << e.x << ',' << e.y << ',' << e.t << ',' << static_cast<int>(e.p) << '\n';
  }
}

EventStream parse_evt_bytes(std::string_view bytes, const ParseOptions& opts) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "EVT1") {
    throw FormatError("bad magic: not an EVT1 file");
  }
  if (bytes.size() < kEvtHeader) {
    throw FormatError("truncated EVT1 header at byte offset " + std::to_string(bytes.size()));
  }
  EventStream s;
  s.sensor_width = get_le<std::uint16_t>(bytes, 4);
  s.sensor_height = get_le<std::uint16_t>(bytes, 6);
  const auto count = get_le<std::uint64_t>(bytes, 8);
  s.events.reserve(std::min<std::uint64_t>(count, (bytes.size() - kEvtHeader) / kEvtRecord));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t off = kEvtHeader + i * kEvtRecord;
    if (off + kEvtRecord > bytes.size()) {
      throw FormatError("truncated EVT1 record " + std::to_string(i) + " at byte offset " +
                        std::to_string(off) + " (header declares " + std::to_string(count) +
                        " records)");
    }
    EventRecord e;
    e.x = get_le<std::uint16_t>(bytes, off);
    e.y = get_le<std::uint16_t>(bytes, off + 2);
    e.t = get_le<double>(bytes, off + 4);
    const auto raw = get_le<std::int8_t>(bytes, off + 12);
    const std::string where = "record " + std::to_string(i) + " (byte offset " +
                              std::to_string(off) + ")";
    if (!std::isfinite(e.t)) throw FormatError(where + ": non-finite timestamp");
    e.p = checked_polarity(raw, opts.zero_is_negative, where);
    check_bounds(e, s.sensor_width, s.sensor_height, static_cast<std::size_t>(i));
    s.events.push_back(e);
  }
  finish_stream(s, opts);
  return s;
}

EventStream parse_evt_binary(const std::filesystem::path& path, const ParseOptions& opts) {
  return parse_evt_bytes(read_file(path), opts);
}

std::string encode_evt(const EventStream& stream) {
  std::string out = "EVT1";
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.sensor_width));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.sensor_height));
  put_le<std::uint64_t>(out, stream.events.size());
  for (const auto& e : stream.events) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.x));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.y));
    put_le<double>(out, e.t);
    put_le<std::int8_t>(out, e.p);
    put_le<std::int8_t>(out, 0);
  }
  return out;
}

void write_evt_binary(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = encode_evt(stream);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Aggregation parse_aggregation(std::string_view name) {
  if (name == "sum") return Aggregation::sum;
  if (name == "avg" || name == "average") return Aggregation::average;
  throw FormatError("unknown aggregation '" + std::string(name) + "' (expected sum or avg)");
}

Index VoxelGrid::nonzero_count() const {
  return static_cast<Index>(std::count_if(data.begin(), data.end(), [](double v) { return v != 0.0; }));
}

template <typename T>
Tensor<T> VoxelGrid::to_tensor() const {
  Buffer<T> v(data.begin(), data.end());
  return Tensor<T>({bins, height, width}, std::move(v));
}

template Tensor<float> VoxelGrid::to_tensor<float>() const;
template Tensor<double> VoxelGrid::to_tensor<double>() const;

VoxelGrid voxelize(const EventStream& stream, Index bins, Index height, Index width,
                   Aggregation aggregation) {
  if (bins < 1) throw FormatError("voxelize: the number of time bins must be >= 1");
  if (height < 1 || width < 1) throw FormatError("voxelize: grid extents must be >= 1");
  VoxelGrid g;
  g.bins = bins;
  g.height = height;
  g.width = width;
  g.aggregation = aggregation;
  g.data.assign(static_cast<std::size_t>(bins * height * width), 0.0);
  if (stream.events.empty()) return g;
  const double span = stream.t_end - stream.t_start;
  if (!(span > 0.0)) {
    throw FormatError("voxelize: degenerate time window [" + std::to_string(stream.t_start) +
                      ", " + std::to_string(stream.t_end) + "]");
  }
  if (stream.sensor_width < 1 || stream.sensor_height < 1) {
    throw FormatError("voxelize: stream has no sensor extent");
  }
  std::vector<std::int32_t> counts;
  if (aggregation == Aggregation::average) counts.assign(g.data.size(), 0);
  for (const auto& e : stream.events) {
    if (e.t < stream.t_start || e.t > stream.t_end) continue;
    Index k = static_cast<Index>(std::floor(static_cast<double>(bins) * (e.t - stream.t_start) / span));
    k = std::clamp<Index>(k, 0, bins - 1);
    const Index y = static_cast<Index>(e.y) * height / stream.sensor_height;
    const Index x = static_cast<Index>(e.x) * width / stream.sensor_width;
    const std::size_t idx = static_cast<std::size_t>((k * height + y) * width + x);
    g.data[idx] += e.p;
    if (!counts.empty()) ++counts[idx];
  }
  if (!counts.empty()) {
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if (counts[i] > 0) g.data[i] /= counts[i];
    }
  }
  return g;
}

std::string_view pattern_name(Pattern p) {
  switch (p) {
    case Pattern::horizontal_bar: return "horizontal_bar";
    case Pattern::vertical_bar: return "vertical_bar";
    case Pattern::diagonal_dot: return "diagonal_dot";
    case Pattern::expanding_square: return "expanding_square";
    case Pattern::rising_bar: return "rising_bar";
    case Pattern::leftward_bar: return "leftward_bar";
    case Pattern::antidiagonal_dot: return "antidiagonal_dot";
    case Pattern::shrinking_square: return "shrinking_square";
  }
  return "unknown";
}

namespace {

// splitmix64 finaliser, used to derive independent per-sample seeds.
std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class PatternWriter {
 public:
  PatternWriter(EventStream& s, Index bins, Rng& rng) : s_(s), bins_(bins), rng_(rng) {}

  void emit(Index x, Index y, Index k, int p) {
    if (x < 0 || y < 0 || x >= s_.sensor_width || y >= s_.sensor_height) return;
    const double t = (static_cast<double>(k) + rng_.uniform(0.05, 0.95)) / static_cast<double>(bins_);
    s_.events.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), t,
                         static_cast<std::int8_t>(p)});
  }
  void row(Index y, Index x0, Index x1, Index k, int p) {
    for (Index x = x0; x < x1; ++x) emit(x, y, k, p);
  }
  void col(Index x, Index y0, Index y1, Index k, int p) {
    for (Index y = y0; y < y1; ++y) emit(x, y, k, p);
  }
  void block(Index x0, Index y0, Index size, Index k, int p) {
    for (Index y = y0; y < y0 + size; ++y) row(y, x0, x0 + size, k, p);
  }
  void ring(Index cx, Index cy, Index r, Index k, int p) {
    if (r < 0) return;
    if (r == 0) {
      emit(cx, cy, k, p);
      return;
    }
    row(cy - r, cx - r, cx + r + 1, k, p);
    row(cy + r, cx - r, cx + r + 1, k, p);
    col(cx - r, cy - r + 1, cy + r, k, p);
    col(cx + r, cy - r + 1, cy + r, k, p);
  }

 private:
  EventStream& s_;
  Index bins_;
  Rng& rng_;
};

Index pick(Rng& rng, Index lo, Index hi) {  // inclusive range, tolerant of hi < lo
  if (hi <= lo) return lo;
  return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

}  // namespace

EventStream synth_pattern_events(Pattern pattern, Index bins, Index height, Index width,
                                 double noise_rate, std::uint64_t seed) {
  if (bins < 1 || height < 4 || width < 4) {
    throw FormatError("synthetic patterns need bins >= 1 and a sensor of at least 4x4");
  }
  Rng rng(seed);
  EventStream s;
  s.sensor_width = static_cast<std::int32_t>(width);
  s.sensor_height = static_cast<std::int32_t>(height);
  s.t_start = 0.0;
  s.t_end = 1.0;
  PatternWriter w(s, bins, rng);
  const Index extent = std::min(height, width);
  const Index unit = std::max<Index>(1, extent / 32);

  switch (pattern) {
    case Pattern::horizontal_bar:
    case Pattern::rising_bar:
    case Pattern::vertical_bar:
    case Pattern::leftward_bar: {
      const bool horizontal = pattern == Pattern::horizontal_bar || pattern == Pattern::rising_bar;
      const bool forward = pattern == Pattern::horizontal_bar || pattern == Pattern::vertical_bar;
      const Index along = horizontal ? height : width;  // direction of motion
      const Index across = horizontal ? width : height;
      const Index thick = pick(rng, unit, 2 * unit);
      Index speed = pick(rng, unit, 2 * unit);
      while (speed > 1 && (bins - 1) * speed + thick + 1 >= along) --speed;
      const Index travel = (bins - 1) * speed + thick + 1;
      const Index start = pick(rng, 0, along - travel);
      const Index lo = pick(rng, 0, across / 4), hi = across - pick(rng, 0, across / 4);
      for (Index k = 0; k < bins; ++k) {
        const Index top = start + k * speed;
        // Leading edge is the row the bar enters, trailing edge the row it leaves.
        Index lead = top + thick, trail = top;
        if (!forward) {
          lead = along - 1 - lead;
          trail = along - 1 - trail;
        }
        if (horizontal) {
          w.row(lead, lo, hi, k, +1);
          w.row(trail, lo, hi, k, -1);
        } else {
          w.col(lead, lo, hi, k, +1);
          w.col(trail, lo, hi, k, -1);
        }
      }
      break;
    }
    case Pattern::diagonal_dot:
    case Pattern::antidiagonal_dot: {
      const Index size = pick(rng, 2 * unit, 4 * unit);
      Index speed = pick(rng, unit, 3 * unit);
      while (speed > 1 && bins * speed + size >= extent) --speed;
      const Index travel = bins * speed + size;
      const Index x0 = pick(rng, 0, width - travel), y0 = pick(rng, 0, height - travel);
      for (Index k = 0; k < bins; ++k) {
        Index cur_x = x0 + (k + 1) * speed, prev_x = x0 + k * speed;
        if (pattern == Pattern::antidiagonal_dot) {
          cur_x = width - size - cur_x;
          prev_x = width - size - prev_x;
        }
        w.block(cur_x, y0 + (k + 1) * speed, size, k, +1);
        w.block(prev_x, y0 + k * speed, size, k, -1);
      }
      break;
    }
    case Pattern::expanding_square:
    case Pattern::shrinking_square: {
      Index speed = pick(rng, unit, 2 * unit);
      const Index r0 = pick(rng, unit, 3 * unit);
      while (speed > 1 && r0 + bins * speed + 1 >= extent / 2) --speed;
      const Index r_max = r0 + bins * speed + 1;
      const Index cx = pick(rng, r_max, width - 1 - r_max);
      const Index cy = pick(rng, r_max, height - 1 - r_max);
      for (Index k = 0; k < bins; ++k) {
        if (pattern == Pattern::expanding_square) {
          const Index r = r0 + k * speed;
          w.ring(cx, cy, r + speed, k, +1);
          w.ring(cx, cy, r, k, -1);
        } else {
          const Index r = r_max - 1 - k * speed;
          w.ring(cx, cy, r - speed, k, +1);
          w.ring(cx, cy, r, k, -1);
        }
      }
      break;
    }
  }

  if (noise_rate > 0.0) {
    std::binomial_distribution<std::int64_t> count_dist(height * width, std::min(noise_rate, 1.0));
    for (Index k = 0; k < bins; ++k) {
      const std::int64_t n = count_dist(rng.engine());
      for (std::int64_t i = 0; i < n; ++i) {
        const Index x = static_cast<Index>(rng.below(static_cast<std::uint64_t>(width)));
        const Index y = static_cast<Index>(rng.below(static_cast<std::uint64_t>(height)));
        w.emit(x, y, k, rng.below(2) ? 1 : -1);
      }
    }
  }
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const EventRecord& a, const EventRecord& b) { return a.t < b.t; });
  return s;
}

std::vector<LabeledGrid> gen_synthetic_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.classes > kPatternCount) {
    throw FormatError("synthetic dataset supports 2 to " + std::to_string(kPatternCount) +
                      " classes, got " + std::to_string(cfg.classes));
  }
  if (cfg.samples_per_class < 1) throw FormatError("samples_per_class must be >= 1");
  std::vector<LabeledGrid> out;
  out.reserve(static_cast<std::size_t>(cfg.classes * cfg.samples_per_class));
  for (int c = 0; c < cfg.classes; ++c) {
    for (int i = 0; i < cfg.samples_per_class; ++i) {
      const std::uint64_t seed =
          mix_seed(cfg.seed ^ mix_seed(static_cast<std::uint64_t>(c) * 1000003ULL +
                                       static_cast<std::uint64_t>(i)));
      const EventStream s = synth_pattern_events(static_cast<Pattern>(c), cfg.bins, cfg.height,
                                                 cfg.width, cfg.noise_rate, seed);
      out.push_back({voxelize(s, cfg.bins, cfg.height, cfg.width, Aggregation::sum), c});
    }
  }
  return out;
}

}  // namespace uskt
