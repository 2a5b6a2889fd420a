// Copyright 2026 The latrisk Authors
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

// Latency-induced collision map: a BEV grid whose cells hold the largest
// LICP over a fixed set of ego probe poses inside the cell.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latrisk/licp.hpp"
#include "latrisk/png.hpp"

namespace latrisk {

struct GridSpec {
  Vec2 origin;  // corner of cell (0, 0)
  double resolution = 0.5;
  int width = 160;
  int height = 160;

  /// Square grid of `size` meters centered on `center`.
  static GridSpec centered(Vec2 center, double size = 80.0, double resolution = 0.5) {
    const int n = static_cast<int>(std::llround(size / resolution));
    return {{center.x - 0.5 * n * resolution, center.y - 0.5 * n * resolution}, resolution, n, n};
  }

  std::size_t cells() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * width + col;
  }
  Vec2 cell_center(int col, int row) const {
    return {origin.x + (col + 0.5) * resolution, origin.y + (row + 0.5) * resolution};
  }

  void validate() const {
    if (!(resolution > 0.0) || !std::isfinite(resolution)) {
      throw std::invalid_argument("GridSpec: resolution must be > 0");
    }
    if (width < 1 || height < 1 || width > 65535 || height > 65535) {
      throw std::invalid_argument("GridSpec: width and height must be in [1, 65535]");
    }
    if (!std::isfinite(origin.x) || !std::isfinite(origin.y)) {
      throw std::invalid_argument("GridSpec: non-finite origin");
    }
  }

  bool operator==(const GridSpec& o) const {
    return origin.x == o.origin.x && origin.y == o.origin.y && resolution == o.resolution &&
           width == o.width && height == o.height;
  }
};

struct RiskGrid {
  GridSpec spec;
  std::vector<double> values;  // row-major, row 0 at the origin
  double tau = 0.0;
  double timestamp = 0.0;

  double at(int col, int row) const { return values[spec.index(col, row)]; }
};

/// The ego side of a LICOM query: its footprint extents and the heading the
/// trajectory has at t_d. With a path, each probe takes the path heading at
/// its projection instead.
struct LicomEgo {
  Extents extents;
  double heading = 0.0;
  const Path* path = nullptr;

  double heading_at(Vec2 p) const {
    if (path == nullptr) return heading;
    return path->pose_at(path->project(p)).theta;
  }
};

/// The obstacle side: belief at the issue time plus its motion model.
struct LicomObstacle {
  MixtureBelief belief;
  MotionModel model;
  Extents extents;
};

struct LicomOptions {
  bool pruning = true;
  double prune_factor = 1e-3;  // floor = lambda * prune_factor
};

inline constexpr int kProbesPerCell = 5;

/// Probe offsets inside a cell: the center and the four quadrant centers.
inline std::array<Vec2, kProbesPerCell> cell_probes(const GridSpec& spec, int col, int row) {
  const Vec2 c = spec.cell_center(col, row);
  const double q = 0.25 * spec.resolution;
  return {c, Vec2{c.x - q, c.y - q}, Vec2{c.x + q, c.y - q}, Vec2{c.x - q, c.y + q},
          Vec2{c.x + q, c.y + q}};
}

namespace detail {

inline double normal_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Upper bound on the propagated obstacle mass whose center lies close enough
// to any probe for the footprints to touch.
inline double reachable_mass(const MixtureBelief& propagated, const std::array<Vec2, 5>& probes,
                             double reach) {
  double lo_x = probes[0].x, hi_x = probes[0].x, lo_y = probes[0].y, hi_y = probes[0].y;
  for (const auto& p : probes) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  double mass = 0.0;
  for (const auto& m : propagated.modes) {
    if (m.weight == 0.0) continue;
    const double dx = std::max({lo_x - m.mean.x, 0.0, m.mean.x - hi_x});
    const double dy = std::max({lo_y - m.mean.y, 0.0, m.mean.y - hi_y});
    const double gap = std::hypot(dx, dy) - reach;
    if (gap <= 0.0) return 1.0;
    const Eigen::Matrix2d cxy = m.covariance.topLeftCorner<2, 2>();
    const double var = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cxy, Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .maxCoeff();
    if (var <= 0.0) continue;
    mass += m.weight * normal_tail(gap / std::sqrt(var));
  }
  return mass;
}

}  // namespace detail

/// LICOM(g; tau) for every cell. Without an obstacle the grid is all zero.
inline RiskGrid compute_licom(const GridSpec& spec, const LicomEgo& ego,
                              const std::optional<LicomObstacle>& obstacle, double tau,
                              const SafetyConfig& cfg, std::uint64_t seed,
                              const LicomOptions& options = {}, double timestamp = 0.0) {
  spec.validate();
  cfg.validate();
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("compute_licom: tau");
  RiskGrid grid{spec, std::vector<double>(spec.cells(), 0.0), tau, timestamp};
  if (!obstacle) return grid;
  obstacle->belief.validate();

  const MixtureBelief propagated = propagate(obstacle->belief, tau, obstacle->model);
  const double reach = ego.extents.circumradius() + obstacle->extents.circumradius();
  const double floor = cfg.lambda * options.prune_factor;

  for (int row = 0; row < spec.height; ++row) {
    for (int col = 0; col < spec.width; ++col) {
      const auto probes = cell_probes(spec, col, row);
      if (options.pruning && detail::reachable_mass(propagated, probes, reach) < floor) continue;
      const std::size_t idx = spec.index(col, row);
      double best = 0.0;
      for (int k = 0; k < kProbesPerCell; ++k) {
        const Pose2 pose(probes[k].x, probes[k].y, ego.heading_at(probes[k]));
        const LatencyQuery q{timestamp, tau,           DecisionAction::proceed(),
                             ego.extents.at(pose),     obstacle->belief,
                             obstacle->model,          obstacle->extents};
        Rng rng(derive_seed(seed, {idx, static_cast<std::uint64_t>(k)}));
        best = std::max(best, licp(q, cfg, rng).value);
      }
      grid.values[idx] = best;
    }
  }
  return grid;
}

/// Unsafe mask: true where value >= lambda.
inline std::vector<bool> classify(const RiskGrid& grid, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("classify: lambda");
  std::vector<bool> mask(grid.values.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = grid.values[i] >= lambda;
  return mask;
}

inline std::size_t count_unsafe(const RiskGrid& grid, double lambda) {
  const auto mask = classify(grid, lambda);
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

/// Cell color: safe cells on a green ramp, unsafe cells on a red ramp, with
/// lambda as the break. Both ramps run from 255 down to 120 or up from 120.
inline std::array<std::uint8_t, 3> cell_color(double v, double lambda) {
  v = std::clamp(v, 0.0, 1.0);
  if (v < lambda) {
    const double f = v / lambda;
    return {0, static_cast<std::uint8_t>(std::lround(255.0 - 135.0 * f)), 0};
  }
  const double f = lambda < 1.0 ? (v - lambda) / (1.0 - lambda) : 1.0;
  return {static_cast<std::uint8_t>(std::lround(120.0 + 135.0 * f)), 0, 0};
}

/// Rasterizes the grid with `px_per_cell` square pixels per cell. Image rows
/// run top-down, so pixel (0, 0) shows cell (0, height - 1).
inline RgbImage rasterize(const RiskGrid& grid, double lambda, int px_per_cell = 4) {
  if (px_per_cell < 1) throw std::invalid_argument("rasterize: px_per_cell must be >= 1");
  const GridSpec& s = grid.spec;
  RgbImage img(s.width * px_per_cell, s.height * px_per_cell);
  for (int row = 0; row < s.height; ++row) {
    for (int col = 0; col < s.width; ++col) {
      const auto c = cell_color(grid.at(col, row), lambda);
      const int y0 = (s.height - 1 - row) * px_per_cell;
      for (int dy = 0; dy < px_per_cell; ++dy) {
        for (int dx = 0; dx < px_per_cell; ++dx) {
          std::uint8_t* p = img.at(col * px_per_cell + dx, y0 + dy);
          p[0] = c[0];
          p[1] = c[1];
          p[2] = c[2];
        }
      }
    }
  }
  return img;
}

inline std::vector<std::uint8_t> render_heatmap(const RiskGrid& grid, double lambda,
                                                int px_per_cell = 4) {
  return encode_png(rasterize(grid, lambda, px_per_cell));
}

inline std::size_t count_red_pixels(const RgbImage& img) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) n += img.pixels[i] > 0 ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Wire payload:
//   "LICM" | version u8 | width u16 | height u16 | resolution f32 |
//   origin_x f32 | origin_y f32 | tau f32 | M x u16 (value * 65535)
// All integers and floats little-endian. The timestamp is not carried.

inline constexpr std::uint8_t kGridWireVersion = 1;
inline constexpr std::size_t kGridHeaderBytes = 4 + 1 + 2 + 2 + 4 * 4;

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_f32(std::vector<std::uint8_t>& b, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xFF));
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline float get_f32(const std::uint8_t* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace detail

inline std::uint16_t quantize_value(double v) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
}

inline double dequantize_value(std::uint16_t q) { return static_cast<double>(q) / 65535.0; }

inline std::vector<std::uint8_t> serialize_grid(const RiskGrid& grid) {
  grid.spec.validate();
  if (grid.values.size() != grid.spec.cells()) {
    throw std::invalid_argument("serialize_grid: value count does not match spec");
  }
  std::vector<std::uint8_t> b;
  b.reserve(kGridHeaderBytes + 2 * grid.values.size());
  b.insert(b.end(), {'L', 'I', 'C', 'M', kGridWireVersion});
  detail::put_u16(b, static_cast<std::uint16_t>(grid.spec.width));
  detail::put_u16(b, static_cast<std::uint16_t>(grid.spec.height));
  detail::put_f32(b, static_cast<float>(grid.spec.resolution));
  detail::put_f32(b, static_cast<float>(grid.spec.origin.x));
  detail::put_f32(b, static_cast<float>(grid.spec.origin.y));
  detail::put_f32(b, static_cast<float>(grid.tau));
  for (double v : grid.values) detail::put_u16(b, quantize_value(v));
  return b;
}

inline RiskGrid deserialize_grid(const std::uint8_t* data, std::size_t size) {
  if (size < kGridHeaderBytes || std::memcmp(data, "LICM", 4) != 0) {
    throw std::invalid_argument("deserialize_grid: bad magic or short header");
  }
  if (data[4] != kGridWireVersion) throw std::invalid_argument("deserialize_grid: bad version");
  RiskGrid g;
  g.spec.width = detail::get_u16(data + 5);
  g.spec.height = detail::get_u16(data + 7);
  g.spec.resolution = detail::get_f32(data + 9);
  g.spec.origin = {detail::get_f32(data + 13), detail::get_f32(data + 17)};
  g.tau = detail::get_f32(data + 21);
  g.spec.validate();
  if (!std::isfinite(g.tau) || g.tau < 0.0) throw std::invalid_argument("deserialize_grid: tau");
  const std::size_t m = g.spec.cells();
  if (size != kGridHeaderBytes + 2 * m) {
    throw std::invalid_argument("deserialize_grid: payload length does not match dimensions");
  }
  g.values.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    g.values[i] = dequantize_value(detail::get_u16(data + kGridHeaderBytes + 2 * i));
  }
  return g;
}

inline RiskGrid deserialize_grid(const std::vector<std::uint8_t>& payload) {
  return deserialize_grid(payload.data(), payload.size());
}

}  // namespace latrisk
