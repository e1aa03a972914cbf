#pragma once

// EVT1 event files and EFR1 frame files. All integers little-endian.
//
// EVT1 (24-byte header, then count 16-byte records)
//   0  "EVT1"
//   4  u32 version (=1)
//   8  u16 sensor_width
//   10 u16 sensor_height
//   12 u32 reserved (=0)
//   16 u64 count
//   record: u64 t_us | u16 x | u16 y | u8 polarity (1 = +, 0 = -) | 3 pad bytes
//
// EFR1 (24-byte header, then T*H*W*C bytes, row-major, channel innermost)
//   0  "EFR1"
//   4  u32 version (=1)
//   8  u32 T | 12 u32 H | 16 u32 W | 20 u32 C (=3)

#include "eventbind/errors.hpp"
#include "eventbind/event_representation.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace eventbind::formats {

inline constexpr std::uint32_t kEvt1Version = 1;
inline constexpr std::uint32_t kEfr1Version = 1;
inline constexpr std::size_t kEvt1HeaderSize = 24;
inline constexpr std::size_t kEvt1RecordSize = 16;
inline constexpr std::size_t kEfr1HeaderSize = 24;

namespace le {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T get(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace le

// ---------------------------------------------------------------------------
// EVT1

inline std::vector<std::uint8_t> encode_evt1(const EventStream& s) {
  if (s.width <= 0 || s.height <= 0 || s.width > 0xFFFF || s.height > 0xFFFF) throw ConfigError("sensor geometry not representable in EVT1");
  std::vector<std::uint8_t> out;
  const auto n = s.valid_count();
  out.reserve(kEvt1HeaderSize + n * kEvt1RecordSize);
  out.insert(out.end(), {'E', 'V', 'T', '1'});
  le::put<std::uint32_t>(out, kEvt1Version);
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(s.width));
  le::put<std::uint16_t>(out, static_cast<std::uint16_t>(s.height));
  le::put<std::uint32_t>(out, 0);
  le::put<std::uint64_t>(out, n);
  for (const EventRecord& e : s.events) {
    if (!e.valid) continue;
    le::put<std::uint64_t>(out, e.t_us);
    le::put<std::uint16_t>(out, e.x);
    le::put<std::uint16_t>(out, e.y);
    out.push_back(e.polarity > 0 ? 1 : 0);
    out.insert(out.end(), {0, 0, 0});
  }
  return out;
}

/// Streaming decode; never buffers more than one chunk of records.
inline EventStream read_evt1(std::istream& in) {
  std::array<std::uint8_t, kEvt1HeaderSize> hdr{};
  in.read(reinterpret_cast<char*>(hdr.data()), hdr.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 4 && std::memcmp(hdr.data(), "EVT1", 4) != 0) throw DataError(DataError::Code::kBadMagic, 0, "not an EVT1 file");
  if (got < kEvt1HeaderSize) throw DataError(DataError::Code::kTruncated, got, "EVT1 header truncated");
  const auto version = le::get<std::uint32_t>(hdr.data() + 4);
  if (version != kEvt1Version) throw DataError(DataError::Code::kBadVersion, 4, "unsupported EVT1 version " + std::to_string(version));

  EventStream s;
  s.width = le::get<std::uint16_t>(hdr.data() + 8);
  s.height = le::get<std::uint16_t>(hdr.data() + 10);
  if (s.width == 0 || s.height == 0) throw DataError(DataError::Code::kBadHeader, 8, "EVT1 sensor geometry is zero");
  const auto count = le::get<std::uint64_t>(hdr.data() + 16);

  constexpr std::size_t kChunk = 4096;
  std::vector<std::uint8_t> buf(kChunk * kEvt1RecordSize);
  std::uint64_t done = 0;
  std::uint64_t last_t = 0;
  while (done < count) {
    const std::uint64_t want = std::min<std::uint64_t>(kChunk, count - done);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(want * kEvt1RecordSize));
    const auto bytes = static_cast<std::uint64_t>(in.gcount());
    const std::uint64_t whole = bytes / kEvt1RecordSize;
    for (std::uint64_t i = 0; i < whole; ++i) {
      const std::uint8_t* r = buf.data() + i * kEvt1RecordSize;
      const std::uint64_t off = kEvt1HeaderSize + (done + i) * kEvt1RecordSize;
      EventRecord e;
      e.t_us = le::get<std::uint64_t>(r);
      e.x = le::get<std::uint16_t>(r + 8);
      e.y = le::get<std::uint16_t>(r + 10);
      const std::uint8_t pol = r[12];
      if (pol > 1) throw DataError(DataError::Code::kBadPolarity, off + 12, "polarity byte must be 0 or 1");
      e.polarity = pol == 1 ? 1 : -1;
      if (e.t_us < last_t) throw DataError(DataError::Code::kNonMonotonicTime, off, "timestamp decreases");
      if (e.x >= s.width || e.y >= s.height) throw DataError(DataError::Code::kOutOfBounds, off + 8, "event outside sensor");
      last_t = e.t_us;
      s.events.push_back(e);
    }
    if (whole < want) {
      throw DataError(DataError::Code::kTruncated, kEvt1HeaderSize + (done + whole) * kEvt1RecordSize + bytes % kEvt1RecordSize,
                      "EVT1 truncated mid-record");
    }
    done += want;
  }
  return s;
}

inline EventStream read_evt1(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Code::kIo, "cannot open " + path);
  return read_evt1(f);
}

inline void write_evt1(const std::string& path, const EventStream& s) {
  const auto bytes = encode_evt1(s);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Code::kIo, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// EFR1

inline std::vector<std::uint8_t> encode_efr1(const ByteFrames& f) {
  std::vector<std::uint8_t> out;
  out.reserve(kEfr1HeaderSize + f.values.size());
  for (char c : {'E', 'F', 'R', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  le::put<std::uint32_t>(out, kEfr1Version);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.frames));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.height));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.width));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.channels));
  out.insert(out.end(), f.values.begin(), f.values.end());
  return out;
}

inline ByteFrames decode_efr1(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "EFR1", 4) != 0) throw DataError(DataError::Code::kBadMagic, 0, "not an EFR1 file");
  if (bytes.size() < kEfr1HeaderSize) throw DataError(DataError::Code::kTruncated, bytes.size(), "EFR1 header truncated");
  const auto version = le::get<std::uint32_t>(bytes.data() + 4);
  if (version != kEfr1Version) throw DataError(DataError::Code::kBadVersion, 4, "unsupported EFR1 version");
  const auto t = le::get<std::uint32_t>(bytes.data() + 8);
  const auto h = le::get<std::uint32_t>(bytes.data() + 12);
  const auto w = le::get<std::uint32_t>(bytes.data() + 16);
  const auto c = le::get<std::uint32_t>(bytes.data() + 20);
  if (c != 3) throw DataError(DataError::Code::kBadHeader, 20, "EFR1 channel count must be 3");
  const std::uint64_t payload = static_cast<std::uint64_t>(t) * h * w * c;
  if (bytes.size() != kEfr1HeaderSize + payload) {
    throw DataError(DataError::Code::kTruncated, bytes.size(), "EFR1 length does not match header");
  }
  ByteFrames f(static_cast<int>(t), static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  std::memcpy(f.values.data(), bytes.data() + kEfr1HeaderSize, payload);
  return f;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Code::kIo, "cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline ByteFrames read_efr1(const std::string& path) { return decode_efr1(read_file_bytes(path)); }

inline void write_efr1(const std::string& path, const ByteFrames& frames) {
  const auto bytes = encode_efr1(frames);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Code::kIo, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace eventbind::formats
