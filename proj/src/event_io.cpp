// Copyright 2026 The EvSign Authors.
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

#include "evsign/event_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"

namespace evsign {

namespace {

constexpr std::string_view kEventMagic = "# evsign-events v1";
constexpr char kVoxelMagic[4] = {'E', 'V', 'V', 'G'};
constexpr std::uint16_t kVoxelVersion = 1;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename I>
bool parse_int(std::string_view s, I& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

[[noreturn]] void line_error(std::size_t line, const std::string& what) {
  throw FormatError("line " + std::to_string(line) + ": " + what);
}

std::uint32_t header_value(std::string_view header, std::string_view key) {
  const auto pos = header.find(key);
  if (pos == std::string_view::npos) line_error(1, "malformed header: missing " + std::string(key));
  auto rest = header.substr(pos + key.size());
  const auto end = rest.find_first_of(" \t");
  std::uint32_t value = 0;
  if (!parse_int(rest.substr(0, end), value) || value == 0)
    line_error(1, "malformed header: bad " + std::string(key));
  return value;
}

}  // namespace

void EventStream::validate() const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) throw FormatError("event " + std::to_string(i) + ": coordinate out of bounds");
    if (e.p != 1 && e.p != -1) throw FormatError("event " + std::to_string(i) + ": polarity must be +1 or -1");
    if (i > 0 && e.t < events[i - 1].t) throw FormatError("events not sorted by time");
    if (e.t < t_start || e.t > t_end) throw FormatError("event " + std::to_string(i) + ": outside stream span");
  }
}

EventStream make_stream(std::vector<Event> events, std::uint32_t width, std::uint32_t height) {
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  EventStream s;
  s.width = width;
  s.height = height;
  if (!events.empty()) {
    s.t_start = events.front().t;
    s.t_end = events.back().t;
  }
  s.events = std::move(events);
  return s;
}

EventStream parse_event_file(std::string_view text) {
  std::size_t line_no = 0;
  std::uint32_t width = 0, height = 0;
  std::vector<Event> events;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line_no == 1) {
      if (line.substr(0, kEventMagic.size()) != kEventMagic) line_error(1, "malformed header");
      width = header_value(line, "width=");
      height = header_value(line, "height=");
      continue;
    }
    if (line.empty() || line.front() == '#') continue;

    std::string_view fields[4];
    std::size_t n = 0;
    for (std::string_view rest = line; n < 4;) {
      const auto comma = rest.find(',');
      fields[n++] = rest.substr(0, comma);
      if (comma == std::string_view::npos) {
        rest = {};
        break;
      }
      rest = rest.substr(comma + 1);
      if (n == 4) line_error(line_no, "expected 4 fields");
    }
    if (n != 4) line_error(line_no, "expected 4 fields");
    Event e;
    std::int32_t p = 0;
    if (!parse_int(fields[0], e.t) || !parse_int(fields[1], e.x) || !parse_int(fields[2], e.y) ||
        !parse_int(fields[3], p))
      line_error(line_no, "malformed event");
    if (e.x >= width || e.y >= height) line_error(line_no, "coordinate out of bounds");
    if (p != 1 && p != -1) line_error(line_no, "polarity must be -1 or 1");
    e.p = static_cast<std::int8_t>(p);
    events.push_back(e);
  }
  if (line_no == 0) throw FormatError("line 1: malformed header: empty file");
  return make_stream(std::move(events), width, height);
}

std::string write_event_file(const EventStream& stream) {
  std::string out;
  out.reserve(32 + stream.events.size() * 16);
  out += kEventMagic;
  out += " width=" + std::to_string(stream.width) + " height=" + std::to_string(stream.height) + "\n";
  for (const Event& e : stream.events) {
    out += std::to_string(e.t);
    out += ',';
    out += std::to_string(e.x);
    out += ',';
    out += std::to_string(e.y);
    out += ',';
    out += std::to_string(static_cast<int>(e.p));
    out += '\n';
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

EventStream read_event_file_path(const std::string& path) { return parse_event_file(read_file(path)); }

void write_event_file_path(const EventStream& stream, const std::string& path) {
  write_file(path, write_event_file(stream));
}

std::vector<std::span<const Event>> segment_stream(const EventStream& stream, std::size_t segments) {
  if (segments == 0) throw std::invalid_argument("segment count must be at least 1");
  const std::uint64_t span = stream.t_end - stream.t_start;
  std::vector<std::size_t> begin(segments + 1, stream.events.size());
  // begin[k] is the first event whose segment index is >= k.
  std::size_t next = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    std::size_t k = 0;
    if (span > 0) {
      const auto rel = static_cast<unsigned __int128>(stream.events[i].t - stream.t_start);
      k = static_cast<std::size_t>(std::min<unsigned __int128>(rel * segments / span, segments - 1));
    }
    while (next <= k) begin[next++] = i;
  }
  std::vector<std::span<const Event>> out;
  out.reserve(segments);
  std::span<const Event> all(stream.events);
  for (std::size_t k = 0; k < segments; ++k) {
    out.push_back(all.subspan(begin[k], begin[k + 1] - begin[k]));
  }
  return out;
}

std::size_t segments_for_window(const EventStream& stream, std::uint64_t window_us) {
  if (window_us == 0) throw std::invalid_argument("window must be positive");
  const std::uint64_t span = stream.t_end - stream.t_start;
  return std::max<std::size_t>(1, static_cast<std::size_t>((span + window_us - 1) / window_us));
}

std::vector<float> voxelize_segment(std::span<const Event> events, std::size_t bins, std::size_t height,
                                    std::size_t width, double t0, double t1) {
  if (bins == 0) throw std::invalid_argument("bin count must be at least 1");
  std::vector<float> out(bins * height * width, 0.0f);
  const double span = t1 - t0;
  const std::size_t plane = height * width;
  for (const Event& e : events) {
    if (e.x >= width || e.y >= height) continue;
    const double t = static_cast<double>(e.t);
    double tn = span > 0 ? static_cast<double>(bins - 1) * (t - t0) / span : 0.0;
    tn = std::clamp(tn, 0.0, static_cast<double>(bins - 1));
    const auto lo = static_cast<std::size_t>(std::floor(tn));
    const std::size_t pixel = static_cast<std::size_t>(e.y) * width + e.x;
    for (std::size_t b = lo; b <= lo + 1 && b < bins; ++b) {
      const double w = std::max(0.0, 1.0 - std::abs(static_cast<double>(b) - tn));
      if (w > 0) out[b * plane + pixel] += static_cast<float>(e.p * w);
    }
  }
  return out;
}

VoxelGrid encode_clip(const EventStream& stream, std::size_t segments, std::size_t bins) {
  VoxelGrid grid;
  grid.segments = segments;
  grid.bins = bins;
  grid.height = stream.height;
  grid.width = stream.width;
  grid.data.reserve(segments * grid.segment_size());
  const auto parts = segment_stream(stream, segments);
  const double start = static_cast<double>(stream.t_start);
  const double delta = static_cast<double>(stream.t_end - stream.t_start) / static_cast<double>(segments);
  for (std::size_t k = 0; k < segments; ++k) {
    const double t0 = start + delta * static_cast<double>(k);
    const double t1 = k + 1 == segments ? static_cast<double>(stream.t_end) : start + delta * static_cast<double>(k + 1);
    auto vox = voxelize_segment(parts[k], bins, stream.height, stream.width, t0, t1);
    grid.data.insert(grid.data.end(), vox.begin(), vox.end());
  }
  return grid;
}

std::string write_voxel(const VoxelGrid& grid) {
  const std::uint64_t dims[4] = {grid.segments, grid.bins, grid.height, grid.width};
  for (auto d : dims)
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension overflow");
  if (grid.data.size() != grid.segments * grid.segment_size()) throw FormatError("grid data size mismatch");
  std::string out(kVoxelMagic, 4);
  out.reserve(kVoxelHeaderBytes + grid.data.size() * 4);
  detail::put_le(out, kVoxelVersion);
  for (auto d : dims) detail::put_le(out, static_cast<std::uint32_t>(d));
  for (float v : grid.data) detail::put_f32(out, v);
  return out;
}

VoxelGrid read_voxel(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(4) != std::string_view(kVoxelMagic, 4)) throw FormatError("bad magic");
  const auto version = in.get<std::uint16_t>();
  if (version != kVoxelVersion) throw FormatError("unsupported EVVG version " + std::to_string(version));
  VoxelGrid grid;
  grid.segments = in.get<std::uint32_t>();
  grid.bins = in.get<std::uint32_t>();
  grid.height = in.get<std::uint32_t>();
  grid.width = in.get<std::uint32_t>();
  unsigned __int128 count = grid.segments;
  for (std::size_t d : {grid.bins, grid.height, grid.width}) count *= d;
  if (count * 4 != in.remaining()) {
    if (count * 4 > in.remaining()) {
      if (count > std::numeric_limits<std::uint32_t>::max() * 4ULL) throw FormatError("dimension overflow");
      throw FormatError("truncated payload");
    }
    throw FormatError("trailing bytes after payload");
  }
  grid.data.resize(static_cast<std::size_t>(count));
  for (float& v : grid.data) v = in.get_f32();
  return grid;
}

}  // namespace evsign
