#pragma once

// EBCK checkpoint container, little-endian:
//
//   "EBCK"
//   u32 version (=1)
//   u64 config length, config snapshot bytes (key=value text)
//   u32 epoch
//   u64 history length, metric history bytes (newline-delimited JSON)
//   u32 tensor count
//   per tensor, in name order:
//     u32 name length, name bytes
//     u32 rank, u64 dims[rank]
//     f64 values[prod(dims)], row-major

#include "eventbind/autodiff.hpp"
#include "eventbind/errors.hpp"
#include "eventbind/formats.hpp"
#include "eventbind/nn.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace eventbind::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config;
  std::uint32_t epoch = 0;
  std::string history;
  std::map<std::string, ad::Mat> tensors;

  static Checkpoint capture(const nn::ParamStore& store, std::string config, std::uint32_t epoch, std::string history) {
    Checkpoint c{std::move(config), epoch, std::move(history), {}};
    for (const auto& [name, p] : store.items()) c.tensors.emplace(name, p->value);
    return c;
  }

  /// Copies every tensor into the store; names and shapes must match exactly.
  void restore(nn::ParamStore& store) const {
    if (tensors.size() != store.items().size()) throw DataError(DataError::Code::kBadHeader, "checkpoint tensor count does not match model");
    for (const auto& [name, value] : tensors) {
      if (!store.contains(name)) throw DataError(DataError::Code::kBadHeader, "checkpoint tensor not in model: " + name);
      ad::Param& p = store.at(name);
      if (p.value.rows() != value.rows() || p.value.cols() != value.cols()) throw DataError(DataError::Code::kBadHeader, "shape mismatch for " + name);
      p.value = value;
      p.zero_grad();
    }
  }

  [[nodiscard]] std::vector<std::uint8_t> encode() const {
    using formats::le::put;
    std::vector<std::uint8_t> out{'E', 'B', 'C', 'K'};
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, config.size());
    out.insert(out.end(), config.begin(), config.end());
    put<std::uint32_t>(out, epoch);
    put<std::uint64_t>(out, history.size());
    out.insert(out.end(), history.begin(), history.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      put<std::uint32_t>(out, 2);
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m(r, c)));
      }
    }
    return out;
  }

  static Checkpoint decode(const std::vector<std::uint8_t>& b) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (b.size() - pos < n) throw DataError(DataError::Code::kTruncated, pos, "checkpoint truncated");
    };
    auto u32 = [&] {
      need(4);
      auto v = formats::le::get<std::uint32_t>(b.data() + pos);
      pos += 4;
      return v;
    };
    auto u64 = [&] {
      need(8);
      auto v = formats::le::get<std::uint64_t>(b.data() + pos);
      pos += 8;
      return v;
    };
    auto bytes = [&](std::uint64_t n) {
      need(n);
      std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
      pos += n;
      return s;
    };

    need(4);
    if (std::memcmp(b.data(), "EBCK", 4) != 0) throw DataError(DataError::Code::kBadMagic, 0, "not an EBCK checkpoint");
    pos = 4;
    if (u32() != kCheckpointVersion) throw DataError(DataError::Code::kBadVersion, 4, "unsupported checkpoint version");
    Checkpoint c;
    c.config = bytes(u64());
    c.epoch = u32();
    c.history = bytes(u64());
    const std::uint32_t count = u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = bytes(u32());
      const std::uint32_t rank = u32();
      if (rank != 2) throw DataError(DataError::Code::kBadHeader, pos, "tensor rank must be 2: " + name);
      const auto rows = u64();
      const auto cols = u64();
      need(rows * cols * 8);
      ad::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index col = 0; col < m.cols(); ++col) m(r, col) = std::bit_cast<double>(u64());
      }
      c.tensors.emplace(std::move(name), std::move(m));
    }
    if (pos != b.size()) throw DataError(DataError::Code::kBadHeader, pos, "trailing bytes after checkpoint");
    return c;
  }

  void save(const std::string& path) const {
    const auto b = encode();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError(DataError::Code::kIo, "cannot write " + path);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!f) throw DataError(DataError::Code::kIo, "write failed for " + path);
  }

  static Checkpoint load(const std::string& path) { return decode(formats::read_file_bytes(path)); }
};

}  // namespace eventbind::harness
