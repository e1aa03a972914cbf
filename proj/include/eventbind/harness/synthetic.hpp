#pragma once

// Moving-shape event simulator. A shape translates across the sensor; every
// pixel whose occupancy switches on between two steps fires a +1 event and
// every pixel switching off fires a -1 event. The paired image is the same
// shape instance rendered statically at the midpoint of its trajectory.

#include "eventbind/errors.hpp"
#include "eventbind/event_representation.hpp"
#include "eventbind/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace eventbind::harness {

enum class ShapeKind : std::uint8_t { kSquare, kTriangle, kDisk, kCross, kBar };

inline constexpr int kShapeKinds = 5;

struct ShapeInstance {
  ShapeKind kind = ShapeKind::kSquare;
  double size = 6.0;   // half-extent in pixels
  double angle = 0.0;  // radians

  /// Occupancy of point (px, py) for a shape centred at (cx, cy).
  [[nodiscard]] bool contains(double px, double py, double cx, double cy) const {
    const double dx = px - cx;
    const double dy = py - cy;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double u = (c * dx + s * dy) / size;  // shape-local, unit half-extent
    const double v = (-s * dx + c * dy) / size;
    switch (kind) {
      case ShapeKind::kSquare:
        return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
      case ShapeKind::kTriangle:
        // apex up, base at v = 0.8
        return v <= 0.8 && v >= -1.0 && std::abs(u) <= (v + 1.0) * 0.5;
      case ShapeKind::kDisk:
        return u * u + v * v <= 0.81;
      case ShapeKind::kCross:
        return (std::abs(u) <= 0.28 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.28 && std::abs(u) <= 1.0);
      case ShapeKind::kBar:
        return std::abs(u) <= 1.0 && std::abs(v) <= 0.3;
    }
    return false;
  }
};

struct SyntheticSample {
  int id = 0;
  int category = 0;
  EventStream events;
  std::vector<double> image;  // H x W x 3, values in {0, 255}
};

struct Dataset {
  std::vector<std::string> categories;
  std::vector<SyntheticSample> samples;
  int sensor_size = 32;

  [[nodiscard]] std::vector<int> per_category_counts() const {
    std::vector<int> counts(categories.size(), 0);
    for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.category)];
    return counts;
  }
};

struct SimulatorSettings {
  int sensor = 32;
  int steps = 30;
  std::uint64_t step_us = 1000;
  double size_lo = 0.25;  // half-extent range, fraction of the sensor
  double size_hi = 0.32;
  double speed_lo = 0.6;  // pixels per step
  double speed_hi = 1.0;
  double start_spread = 0.3;  // start-position range around the centre, fraction of the free span

  void validate() const {
    if (steps < 2) throw ConfigError("sim_steps must be >= 2");
    if (step_us < 1) throw ConfigError("simulator step duration must be >= 1 us");
    if (!(size_lo > 0.0 && size_lo <= size_hi && size_hi <= 0.5)) throw ConfigError("need 0 < sim_size_min <= sim_size_max <= 0.5");
    if (!(speed_lo >= 0.0 && speed_lo <= speed_hi)) throw ConfigError("need 0 <= sim_speed_min <= sim_speed_max");
    if (!(start_spread >= 0.0 && start_spread <= 1.0)) throw ConfigError("sim_start_spread must be in [0,1]");
  }
};

inline std::vector<std::uint8_t> occupancy(const ShapeInstance& shape, double cx, double cy, int sensor) {
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(sensor) * sensor, 0);
  for (int y = 0; y < sensor; ++y) {
    for (int x = 0; x < sensor; ++x) occ[static_cast<std::size_t>(y) * sensor + x] = shape.contains(x + 0.5, y + 0.5, cx, cy) ? 1 : 0;
  }
  return occ;
}

/// Simulates one sample. Category c uses shape kind c mod 5; categories
/// beyond the fifth reuse kinds at a different scale.
inline SyntheticSample simulate_sample(int id, int category, Rng& rng, const SimulatorSettings& sim = {}) {
  const int n = sim.sensor;
  ShapeInstance shape;
  shape.kind = static_cast<ShapeKind>(category % kShapeKinds);
  const double scale_bucket = 1.0 + 0.35 * (category / kShapeKinds);
  shape.size = n * rng.uniform(sim.size_lo, sim.size_hi) * scale_bucket;
  shape.angle = shape.kind == ShapeKind::kDisk ? 0.0 : rng.uniform(-0.4, 0.4);

  const double margin = std::min(shape.size + 1.0, n / 2.0 - 1.0);
  const double half_span = (n / 2.0 - margin) * sim.start_spread;
  double cx = n / 2.0 + rng.uniform(-half_span, half_span);
  double cy = n / 2.0 + rng.uniform(-half_span, half_span);
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double speed = rng.uniform(sim.speed_lo, sim.speed_hi);
  double vx = speed * std::cos(heading);
  double vy = speed * std::sin(heading);

  SyntheticSample s;
  s.id = id;
  s.category = category;
  s.events.width = n;
  s.events.height = n;

  std::vector<std::uint8_t> prev = occupancy(shape, cx, cy, n);
  double mid_x = cx;
  double mid_y = cy;
  for (int step = 1; step <= sim.steps; ++step) {
    cx += vx;
    cy += vy;
    // bounce to keep the shape on the sensor
    if (cx < margin || cx > n - margin) {
      vx = -vx;
      cx += 2 * vx;
    }
    if (cy < margin || cy > n - margin) {
      vy = -vy;
      cy += 2 * vy;
    }
    if (step == sim.steps / 2) {
      mid_x = cx;
      mid_y = cy;
    }
    std::vector<std::uint8_t> cur = occupancy(shape, cx, cy, n);
    const std::uint64_t t0 = static_cast<std::uint64_t>(step) * sim.step_us;
    std::uint64_t k = 0;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * n + x;
        if (cur[i] == prev[i]) continue;
        EventRecord e;
        e.t_us = t0 + std::min<std::uint64_t>(k++, sim.step_us - 1);
        e.x = static_cast<std::uint16_t>(x);
        e.y = static_cast<std::uint16_t>(y);
        e.polarity = cur[i] ? 1 : -1;
        s.events.events.push_back(e);
      }
    }
    prev = std::move(cur);
  }

  s.image.assign(static_cast<std::size_t>(n) * n * 3, 0.0);
  const auto occ = occupancy(shape, mid_x, mid_y, n);
  for (std::size_t i = 0; i < occ.size(); ++i) {
    if (occ[i]) s.image[i * 3] = s.image[i * 3 + 1] = s.image[i * 3 + 2] = 255.0;
  }
  return s;
}

/// samples_per_category samples for every category, ordered category-major.
/// Deterministic in seed.
inline Dataset make_synthetic_dataset(std::uint64_t seed, const std::vector<std::string>& categories, int samples_per_category,
                                      int sensor = 32, SimulatorSettings sim = {}) {
  if (categories.size() < 2) throw ConfigError("synthetic dataset needs at least two categories");
  if (samples_per_category < 1) throw ConfigError("samples_per_category must be >= 1");
  if (sensor < 16) throw ConfigError("sensor must be at least 16 pixels");
  sim.validate();
  Dataset d;
  d.categories = categories;
  d.sensor_size = sensor;
  sim.sensor = sensor;
  int id = 0;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    // per-category streams keep a category's samples stable when others are added
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + c + 1);
    for (int i = 0; i < samples_per_category; ++i) {
      SyntheticSample s = simulate_sample(id++, static_cast<int>(c), rng, sim);
      while (s.events.events.empty()) s = simulate_sample(s.id, static_cast<int>(c), rng, sim);
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

/// Splits each category's samples: the first train_per_category go to
/// train, the rest to validation.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, int train_per_category) {
  Dataset train, val;
  train.categories = val.categories = d.categories;
  train.sensor_size = val.sensor_size = d.sensor_size;
  std::vector<int> seen(d.categories.size(), 0);
  for (const auto& s : d.samples) {
    auto& n = seen[static_cast<std::size_t>(s.category)];
    (n++ < train_per_category ? train : val).samples.push_back(s);
  }
  return {std::move(train), std::move(val)};
}

/// Exactly k samples per category: seeded shuffle of each category's
/// samples, then the first k. Output keeps category-major order.
inline Dataset few_shot_subset(const Dataset& d, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("few-shot k must be >= 1");
  std::vector<std::vector<std::size_t>> by_cat(d.categories.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) by_cat[static_cast<std::size_t>(d.samples[i].category)].push_back(i);
  Dataset out;
  out.categories = d.categories;
  out.sensor_size = d.sensor_size;
  Rng rng(seed);
  for (std::size_t c = 0; c < by_cat.size(); ++c) {
    auto& idx = by_cat[c];
    if (idx.size() < static_cast<std::size_t>(k)) {
      throw ConfigError("category '" + d.categories[c] + "' has " + std::to_string(idx.size()) + " samples, fewer than k=" + std::to_string(k));
    }
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out.samples.push_back(d.samples[i]);
  }
  return out;
}

}  // namespace eventbind::harness
