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

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evsign {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file, clip or corpus that should exist does not.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::int8_t p = 1;  // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  std::vector<Event> events;  // sorted by t, stable
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;

  // Validates bounds, polarity and ordering; throws FormatError.
  void validate() const;
};

// Sorts events stably by t and sets [t_start, t_end] to the event extent
// ({0, 0} when empty).
EventStream make_stream(std::vector<Event> events, std::uint32_t width, std::uint32_t height);

// `evsign-events v1` text format.
EventStream parse_event_file(std::string_view text);
std::string write_event_file(const EventStream& stream);
EventStream read_event_file_path(const std::string& path);
void write_event_file_path(const EventStream& stream, const std::string& path);

// Splits [t_start, t_end] into `segments` equal windows. Segment k holds
// events with t in [t_start + k*d, t_start + (k+1)*d); the last one is closed
// on the right. A zero-length span puts everything in segment 0.
std::vector<std::span<const Event>> segment_stream(const EventStream& stream, std::size_t segments);

// ceil(duration / window_us), at least 1.
std::size_t segments_for_window(const EventStream& stream, std::uint64_t window_us);

// Bilinear deposit of polarity into `bins` temporal bins over [t0, t1].
// Returns bins*height*width values, W fastest. Events outside the sensor are
// skipped; timestamps outside the window are clamped to its ends.
std::vector<float> voxelize_segment(std::span<const Event> events, std::size_t bins, std::size_t height,
                                    std::size_t width, double t0, double t1);

struct VoxelGrid {
  std::size_t segments = 0;  // P
  std::size_t bins = 0;      // B
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;  // P*B*H*W, W fastest

  std::size_t segment_size() const { return bins * height * width; }
  std::span<const float> segment(std::size_t k) const {
    return std::span<const float>(data).subspan(k * segment_size(), segment_size());
  }
  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;
};

VoxelGrid encode_clip(const EventStream& stream, std::size_t segments, std::size_t bins);

// EVVG little-endian container.
std::string write_voxel(const VoxelGrid& grid);
VoxelGrid read_voxel(std::string_view bytes);
constexpr std::size_t kVoxelHeaderBytes = 4 + 2 + 4 * 4;

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace evsign
