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

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>

#include "latrisk/geometry.hpp"
#include "latrisk/prediction.hpp"
#include "latrisk/rng.hpp"

namespace latrisk {

enum class RiskMethod { kMonteCarlo, kQuadrature, kNested };

/// A collision probability with its sampling error.
struct RiskEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t samples = 0;
  RiskMethod method = RiskMethod::kMonteCarlo;
};

inline constexpr std::int64_t kMinMcSamples = 100;
inline constexpr double kMaxQuadratureResolution = 0.25;
inline constexpr int kMinHeadingNodes = 9;

/// Fraction of `n` belief samples whose footprint overlaps the ego.
inline RiskEstimate collision_prob_mc(const Footprint& ego, const MixtureBelief& belief,
                                      const Extents& obstacle, std::int64_t n, Rng& rng) {
  if (n < kMinMcSamples) throw std::invalid_argument("collision_prob_mc: n must be >= 100");
  const MixtureSampler sampler(belief);
  const FootprintTester tester(ego, obstacle);
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (tester.hits(sampler.sample(rng))) ++hits;
  }
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n)), n, RiskMethod::kMonteCarlo};
}

namespace detail {

// Normal-weighted nodes spanning +-3 sigma, renormalized to unit mass.
inline std::vector<std::pair<double, double>> heading_nodes(double mean, double sigma, int count) {
  std::vector<std::pair<double, double>> nodes;
  if (sigma <= 0.0) {
    nodes.emplace_back(mean, 1.0);
    return nodes;
  }
  double total = 0.0;
  for (int k = 0; k < count; ++k) {
    const double u = -3.0 + 6.0 * k / (count - 1);
    const double w = std::exp(-0.5 * u * u);
    nodes.emplace_back(mean + u * sigma, w);
    total += w;
  }
  for (auto& n : nodes) n.second /= total;
  return nodes;
}

}  // namespace detail

/// Brute-force Riemann sum of the collision indicator against the belief
/// density over a 6-sigma box. Heading is marginalized on a fixed node set;
/// position is integrated on the conditional Gaussian given each heading.
inline RiskEstimate collision_prob_quadrature(const Footprint& ego, const MixtureBelief& belief,
                                              const Extents& obstacle, double resolution,
                                              int heading_count = 13) {
  if (!(resolution > 0.0) || resolution > kMaxQuadratureResolution) {
    throw std::invalid_argument("collision_prob_quadrature: resolution must be in (0, 0.25]");
  }
  if (heading_count < kMinHeadingNodes) {
    throw std::invalid_argument("collision_prob_quadrature: need >= 9 heading nodes");
  }
  belief.validate();
  const FootprintTester tester(ego, obstacle);
  constexpr double kTiny = 1e-12;
  std::int64_t evaluations = 0;
  double total = 0.0;

  for (const auto& mode : belief.modes) {
    if (mode.weight == 0.0) continue;
    const Mat3& S = mode.covariance;
    const double var_th = S(2, 2);
    const double sd_th = var_th > kTiny ? std::sqrt(var_th) : 0.0;
    Eigen::Matrix2d Sxy = S.topLeftCorner<2, 2>();
    Eigen::Vector2d Sxy_th = S.topRightCorner<2, 1>();
    Eigen::Matrix2d cond = Sxy;
    Eigen::Vector2d gain = Eigen::Vector2d::Zero();
    if (sd_th > 0.0) {
      gain = Sxy_th / var_th;
      cond = Sxy - Sxy_th * Sxy_th.transpose() / var_th;
    }
    cond = 0.5 * (cond + cond.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cond);
    const Eigen::Vector2d ev = es.eigenvalues().cwiseMax(0.0);
    const Eigen::Matrix2d V = es.eigenvectors();

    double mode_sum = 0.0;
    for (const auto& [theta_off, w_th] : detail::heading_nodes(0.0, sd_th, heading_count)) {
      const double theta = mode.mean.theta + theta_off;
      const double cx = mode.mean.x + gain(0) * theta_off;
      const double cy = mode.mean.y + gain(1) * theta_off;
      double node_sum = 0.0;
      if (ev(1) <= kTiny) {
        // Point mass in position.
        node_sum = tester.hits(cx, cy, theta) ? 1.0 : 0.0;
        ++evaluations;
      } else if (ev(0) <= kTiny) {
        // Line mass along the major axis.
        const double sd = std::sqrt(ev(1));
        const Eigen::Vector2d dir = V.col(1);
        const int half = static_cast<int>(std::ceil(6.0 * sd / resolution));
        double wsum = 0.0, hit = 0.0;
        for (int i = -half; i <= half; ++i) {
          const double t = i * resolution;
          const double w = std::exp(-0.5 * (t / sd) * (t / sd));
          wsum += w;
          if (tester.hits(cx + t * dir(0), cy + t * dir(1), theta)) hit += w;
          ++evaluations;
        }
        node_sum = hit / wsum;
      } else {
        // Full 2D grid in the conditional principal frame.
        const double sa = std::sqrt(ev(0)), sb = std::sqrt(ev(1));
        const Eigen::Vector2d da = V.col(0), db = V.col(1);
        const int na = static_cast<int>(std::ceil(6.0 * sa / resolution));
        const int nb = static_cast<int>(std::ceil(6.0 * sb / resolution));
        double wsum = 0.0, hit = 0.0;
        for (int i = -na; i <= na; ++i) {
          const double a = i * resolution;
          const double wa = std::exp(-0.5 * (a / sa) * (a / sa));
          for (int j = -nb; j <= nb; ++j) {
            const double b = j * resolution;
            const double w = wa * std::exp(-0.5 * (b / sb) * (b / sb));
            wsum += w;
            if (tester.hits(cx + a * da(0) + b * db(0), cy + a * da(1) + b * db(1), theta)) hit += w;
            ++evaluations;
          }
        }
        node_sum = hit / wsum;
      }
      mode_sum += w_th * node_sum;
    }
    total += mode.weight * mode_sum;
  }
  return {std::clamp(total, 0.0, 1.0), 0.0, evaluations, RiskMethod::kQuadrature};
}

/// Id of the obstacle with the smallest center distance; ties go to the
/// lowest id.
inline std::optional<int> closest_obstacle(const EgoState& ego,
                                           std::span<const ObstacleState> obstacles) {
  std::optional<int> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& o : obstacles) {
    const double d = norm(o.pose.position() - ego.pose.position());
    if (d < best_d || (d == best_d && best && o.id < *best)) {
      best_d = d;
      best = o.id;
    }
  }
  return best;
}

}  // namespace latrisk
