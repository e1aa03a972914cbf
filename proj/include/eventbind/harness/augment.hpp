#pragma once

// Dihedral augmentation: the 8 flips/rotations of a square grid, applied
// identically to every frame of a sample and to its paired image.

#include "eventbind/event_representation.hpp"
#include "eventbind/harness/model.hpp"

#include <stdexcept>
#include <vector>

namespace eventbind::harness {

inline constexpr int kDihedralCount = 8;

/// Source coordinate for output (y, x) under transform k of an n x n grid.
/// Bit 0: flip x, bit 1: flip y, bit 2: transpose (applied first).
inline std::pair<int, int> dihedral_source(int k, int y, int x, int n) {
  if (k & 1) x = n - 1 - x;
  if (k & 2) y = n - 1 - y;
  if (k & 4) std::swap(x, y);
  return {y, x};
}

template <typename T>
FrameTensor<T> dihedral(const FrameTensor<T>& in, int k) {
  if (k == 0) return in;
  if (in.height != in.width) throw std::invalid_argument("dihedral: frames must be square");
  FrameTensor<T> out(in.frames, in.height, in.width, in.channels);
  for (int t = 0; t < in.frames; ++t) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        const auto [sy, sx] = dihedral_source(k, y, x, in.width);
        for (int c = 0; c < in.channels; ++c) out.at(t, y, x, c) = in.at(t, sy, sx, c);
      }
    }
  }
  return out;
}

inline PreparedSample dihedral(const PreparedSample& s, int k) {
  if (k == 0) return s;
  PreparedSample out{s.id, s.category, dihedral(s.frames, k), {}};
  if (!s.image.empty()) {
    const int n = s.frames.width;
    Frames img(1, n, n, 3);
    if (img.values.size() != s.image.size()) throw std::invalid_argument("dihedral: image must match frame geometry");
    img.values = s.image;
    out.image = dihedral(img, k).values;
  }
  return out;
}

}  // namespace eventbind::harness
