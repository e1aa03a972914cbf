#pragma once

// Event stream -> colorized frame tensor.
//
//   normalize_stream -> partition_stream -> build_histograms -> colorize -> resize_frames
//
// Everything up to colorize is integer arithmetic and is the bit-exact
// contract shared with external ingest tools (EFR1 files). Resize is
// real-valued and lives only here.

#include "eventbind/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace eventbind {

struct EventRecord {
  std::uint64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;  // +1 or -1
  bool valid = true;         // false for padding

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct EventStream {
  int width = 0;
  int height = 0;
  std::vector<EventRecord> events;
  bool degenerate = false;  // set when normalization produced only padding

  /// Throws DataError if timestamps decrease, coordinates leave the sensor
  /// or a polarity is not +-1. Padding records are skipped.
  void validate() const {
    std::uint64_t last = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const EventRecord& e = events[i];
      if (!e.valid) continue;
      if (e.t_us < last) throw DataError(DataError::Code::kNonMonotonicTime, i, "timestamp decreases at record " + std::to_string(i));
      last = e.t_us;
      if (e.x >= width || e.y >= height) throw DataError(DataError::Code::kOutOfBounds, i, "event outside sensor at record " + std::to_string(i));
      if (e.polarity != 1 && e.polarity != -1) throw DataError(DataError::Code::kBadPolarity, i, "polarity must be +1 or -1 at record " + std::to_string(i));
    }
  }

  [[nodiscard]] std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [](const EventRecord& e) { return e.valid; }));
  }
};

struct RepresentationConfig {
  std::int64_t total_events = 8;      // P
  std::int64_t events_per_frame = 2;  // Q
  int target_resolution = 224;

  [[nodiscard]] int frame_count() const { return static_cast<int>(total_events / events_per_frame); }

  void validate() const {
    if (total_events <= 0) throw ConfigError("total_events must be >= 1");
    if (events_per_frame <= 0) throw ConfigError("events_per_frame must be >= 1");
    if (total_events % events_per_frame != 0) throw ConfigError("total_events must be divisible by events_per_frame");
    if (target_resolution <= 0) throw ConfigError("target_resolution must be >= 1");
  }
};

/// T x H x W x 2 counts; channel 0 positive, channel 1 negative.
struct Histogram {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  Histogram() = default;
  Histogram(int t, int h, int w)
      : frames(t), height(h), width(w), counts(static_cast<std::size_t>(t) * h * w * 2, 0) {}

  [[nodiscard]] std::size_t index(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * 2 + c;
  }
  [[nodiscard]] std::uint32_t at(int t, int y, int x, int c) const { return counts[index(t, y, x, c)]; }
  std::uint32_t& at(int t, int y, int x, int c) { return counts[index(t, y, x, c)]; }

  [[nodiscard]] std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

/// T x H x W x C tensor, row-major with channels innermost.
template <typename T>
struct FrameTensor {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<T> values;

  FrameTensor() = default;
  FrameTensor(int t, int h, int w, int c = 3)
      : frames(t), height(h), width(w), channels(c), values(static_cast<std::size_t>(t) * h * w * c, T{}) {}

  [[nodiscard]] std::size_t index(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c;
  }
  [[nodiscard]] T at(int t, int y, int x, int c) const { return values[index(t, y, x, c)]; }
  T& at(int t, int y, int x, int c) { return values[index(t, y, x, c)]; }

  [[nodiscard]] std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * channels; }

  [[nodiscard]] std::span<const T> frame(int t) const {
    return std::span<const T>(values).subspan(static_cast<std::size_t>(t) * frame_size(), frame_size());
  }

  friend bool operator==(const FrameTensor&, const FrameTensor&) = default;
};

using ByteFrames = FrameTensor<std::uint8_t>;
using Frames = FrameTensor<double>;

// ---------------------------------------------------------------------------

/// Truncates to the first P events or pads the tail with invalid records.
inline EventStream normalize_stream(const EventStream& stream, std::int64_t total_events) {
  if (total_events <= 0) throw ConfigError("total_events must be >= 1");
  const auto p = static_cast<std::size_t>(total_events);
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  out.events.reserve(p);
  const std::size_t keep = std::min(p, stream.events.size());
  out.events.assign(stream.events.begin(), stream.events.begin() + static_cast<std::ptrdiff_t>(keep));
  EventRecord pad;
  pad.valid = false;
  pad.polarity = 0;
  out.events.resize(p, pad);
  out.degenerate = out.valid_count() == 0;
  return out;
}

/// Splits into T = P/Q views of Q consecutive records. Views borrow from stream.
inline std::vector<std::span<const EventRecord>> partition_stream(const EventStream& stream, std::int64_t events_per_frame) {
  if (events_per_frame <= 0) throw ConfigError("events_per_frame must be >= 1");
  const auto q = static_cast<std::size_t>(events_per_frame);
  if (stream.events.empty() || stream.events.size() % q != 0) {
    throw ConfigError("stream length " + std::to_string(stream.events.size()) + " is not a positive multiple of " + std::to_string(q));
  }
  std::vector<std::span<const EventRecord>> parts;
  const std::span<const EventRecord> all(stream.events);
  for (std::size_t off = 0; off < all.size(); off += q) parts.push_back(all.subspan(off, q));
  return parts;
}

inline Histogram build_histograms(std::span<const std::span<const EventRecord>> parts, int height, int width) {
  if (height <= 0 || width <= 0) throw ConfigError("histogram geometry must be positive");
  Histogram h(static_cast<int>(parts.size()), height, width);
  std::size_t record = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    for (const EventRecord& e : parts[t]) {
      if (e.valid) {
        if (e.x >= width || e.y >= height) {
          throw DataError(DataError::Code::kOutOfBounds, record,
                          "event (" + std::to_string(e.x) + "," + std::to_string(e.y) + ") outside " +
                              std::to_string(width) + "x" + std::to_string(height) + " at record " + std::to_string(record));
        }
        if (e.polarity != 1 && e.polarity != -1) {
          throw DataError(DataError::Code::kBadPolarity, record, "polarity must be +1 or -1 at record " + std::to_string(record));
        }
        ++h.at(static_cast<int>(t), e.y, e.x, e.polarity > 0 ? 0 : 1);
      }
      ++record;
    }
  }
  return h;
}

inline Histogram build_histograms(const std::vector<std::span<const EventRecord>>& parts, int height, int width) {
  return build_histograms(std::span<const std::span<const EventRecord>>(parts), height, width);
}

/// Positive counts times [0,255,255] plus negative counts times [255,255,0],
/// saturated at 255 per channel.
inline ByteFrames colorize(const Histogram& h) {
  ByteFrames out(h.frames, h.height, h.width, 3);
  constexpr std::uint64_t kPos[3] = {0, 255, 255};
  constexpr std::uint64_t kNeg[3] = {255, 255, 0};
  for (int t = 0; t < h.frames; ++t) {
    for (int y = 0; y < h.height; ++y) {
      for (int x = 0; x < h.width; ++x) {
        const std::uint64_t pos = h.at(t, y, x, 0);
        const std::uint64_t neg = h.at(t, y, x, 1);
        for (int c = 0; c < 3; ++c) {
          const std::uint64_t v = pos * kPos[c] + neg * kNeg[c];
          out.at(t, y, x, c) = static_cast<std::uint8_t>(std::min<std::uint64_t>(v, 255));
        }
      }
    }
  }
  return out;
}

/// Bilinear resize with half-pixel centers and edge clamping, no antialiasing.
template <typename T>
Frames resize_frames(const FrameTensor<T>& in, int target) {
  if (target <= 0) throw ConfigError("resize target must be >= 1");
  Frames out(in.frames, target, target, in.channels);
  const double sy = static_cast<double>(in.height) / target;
  const double sx = static_cast<double>(in.width) / target;

  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int n_out, int n_in, double s) {
    std::vector<Tap> v(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
      double src = (i + 0.5) * s - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n_in - 1);
      v[static_cast<std::size_t>(i)] = Tap{i0, i1, src - i0};
    }
    return v;
  };
  const auto ty = taps(target, in.height, sy);
  const auto tx = taps(target, in.width, sx);

  for (int t = 0; t < in.frames; ++t) {
    for (int y = 0; y < target; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < target; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        for (int c = 0; c < in.channels; ++c) {
          const double v00 = static_cast<double>(in.at(t, a.i0, b.i0, c));
          const double v01 = static_cast<double>(in.at(t, a.i0, b.i1, c));
          const double v10 = static_cast<double>(in.at(t, a.i1, b.i0, c));
          const double v11 = static_cast<double>(in.at(t, a.i1, b.i1, c));
          const double top = v00 + (v01 - v00) * b.w1;
          const double bot = v10 + (v11 - v10) * b.w1;
          out.at(t, y, x, c) = top + (bot - top) * a.w1;
        }
      }
    }
  }
  return out;
}

/// Pre-resize pipeline; this is what EFR1 files contain.
inline ByteFrames events_to_byte_frames(const EventStream& stream, const RepresentationConfig& cfg) {
  cfg.validate();
  if (stream.width <= 0 || stream.height <= 0) throw ConfigError("stream has no sensor geometry");
  const EventStream norm = normalize_stream(stream, cfg.total_events);
  const auto parts = partition_stream(norm, cfg.events_per_frame);
  return colorize(build_histograms(parts, stream.height, stream.width));
}

inline Frames events_to_frames(const EventStream& stream, const RepresentationConfig& cfg) {
  return resize_frames(events_to_byte_frames(stream, cfg), cfg.target_resolution);
}

}  // namespace eventbind
