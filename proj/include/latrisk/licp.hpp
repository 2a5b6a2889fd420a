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

// Latency-induced collision probability: the expected collision probability
// at the instant a delayed decision takes effect, given what is known now.

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "latrisk/collision.hpp"
#include "latrisk/ego_plan.hpp"
#include "latrisk/prediction.hpp"
#include "latrisk/rng.hpp"

namespace latrisk {

struct SafetyConfig {
  double lambda = 0.3;
  int outer_samples = 200;
  int inner_samples = 100;
  double step = 0.01;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("SafetyConfig: lambda");
    if (outer_samples < 10 || inner_samples < 10) {
      throw std::invalid_argument("SafetyConfig: need >= 10 outer and inner samples");
    }
    if (!(step > 0.0)) throw std::invalid_argument("SafetyConfig: step");
  }
};

/// Everything the estimator needs about one delayed decision.
struct LatencyQuery {
  double issue_time = 0.0;
  double latency = 0.0;
  DecisionAction action;
  Footprint ego_at_decision;  // x_0(t + latency) under `action`
  MixtureBelief belief;       // obstacle belief at issue_time
  MotionModel model;
  Extents obstacle;

  double decision_time() const { return issue_time + latency; }
};

inline LatencyQuery make_latency_query(const EgoPlan& plan, const EgoMotion& ego,
                                       const DecisionAction& action, double latency,
                                       const MixtureBelief& belief, const MotionModel& model,
                                       const Extents& obstacle) {
  return {ego.state.time,
          latency,
          action,
          plan.extents.at(rollout_pose(plan, ego, action, latency)),
          belief,
          model,
          obstacle};
}

/// Nested Monte Carlo: outer draws of the current obstacle pose, each
/// propagated over the latency and scored with inner draws. The standard
/// error comes from the spread of the outer conditional probabilities.
inline RiskEstimate licp(const LatencyQuery& q, const SafetyConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!(q.latency >= 0.0) || !std::isfinite(q.latency) || !std::isfinite(q.issue_time) ||
      !q.ego_at_decision.valid() || !q.model.process_noise.allFinite() ||
      !std::isfinite(q.model.velocity.x) || !std::isfinite(q.model.velocity.y)) {
    throw std::invalid_argument("licp: non-finite or invalid query");
  }
  const MixtureSampler outer(q.belief);
  const FootprintTester tester(q.ego_at_decision, q.obstacle);
  const double tau = q.latency;
  const Mat3 inner_factor = psd_sqrt(tau * q.model.process_noise);
  const bool inner_degenerate = tau == 0.0 || inner_factor.isZero(0.0);
  // Inner draws beyond 8 sigma of the largest axis never occur in practice,
  // so outer draws that far from the ego skip the inner loop.
  const double inner_sd = inner_degenerate ? 0.0 : inner_factor.colwise().norm().maxCoeff();
  const double skip_r = tester.reach() + 8.0 * inner_sd;
  const double ex = q.ego_at_decision.center.x, ey = q.ego_at_decision.center.y;
  const double shift_x = q.model.velocity.x * tau;
  const double shift_y = q.model.velocity.y * tau;

  const int n_out = cfg.outer_samples;
  const int n_in = cfg.inner_samples;
  double sum = 0.0, sum_sq = 0.0;
  for (int k = 0; k < n_out; ++k) {
    const Pose2 now = outer.sample(rng);
    const double mx = now.x + shift_x, my = now.y + shift_y, mth = now.theta;
    double p = 0.0;
    if (inner_degenerate) {
      p = tester.hits(mx, my, mth) ? 1.0 : 0.0;
    } else if ((mx - ex) * (mx - ex) + (my - ey) * (my - ey) > skip_r * skip_r) {
      p = 0.0;
    } else {
      int hits = 0;
      for (int i = 0; i < n_in; ++i) {
        const Vec3 z(rng.normal(), rng.normal(), rng.normal());
        const Vec3 d = inner_factor * z;
        if (tester.hits(mx + d(0), my + d(1), mth + d(2))) ++hits;
      }
      p = static_cast<double>(hits) / n_in;
    }
    sum += p;
    sum_sq += p * p;
  }
  const double mean = sum / n_out;
  const double var = std::max(0.0, (sum_sq - n_out * mean * mean) / (n_out - 1));
  return {std::clamp(mean, 0.0, 1.0), std::sqrt(var / n_out),
          static_cast<std::int64_t>(n_out) * (inner_degenerate ? 1 : n_in), RiskMethod::kNested};
}

/// A decision is (lambda, tau)-safe when the no-collision probability
/// exceeds 1 - lambda, i.e. when the collision probability is below lambda.
inline bool is_safe(const RiskEstimate& estimate, const SafetyConfig& cfg) {
  return estimate.value < cfg.lambda;
}

// ---------------------------------------------------------------------------
// Risk of committing to the reference over a post-decision window.

struct RiskWindow {
  double horizon = 2.0;         // seconds after the decision takes effect
  double probe_interval = 0.1;  // seconds between probes
  double prune_sigmas = 6.0;    // probes beyond reach + k sigma are exactly 0

  int probe_count() const {
    return static_cast<int>(std::floor(horizon / probe_interval + 1e-9)) + 1;
  }
};

struct WindowRisk {
  double value = 0.0;
  double std_error = 0.0;
  double peak_time = 0.0;  // absolute time of the riskiest probe
  int evaluated = 0;       // probes that needed sampling
};

/// Whether the propagated obstacle can reach the ego footprint at all.
inline bool within_reach(const Footprint& ego, const MixtureBelief& propagated,
                         const Extents& obstacle, double sigmas) {
  const double reach = ego.circumradius() + obstacle.circumradius();
  for (const auto& m : propagated.modes) {
    if (m.weight == 0.0) continue;
    const Eigen::Matrix2d cxy = m.covariance.topLeftCorner<2, 2>();
    const double sd = std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(
                                                  cxy, Eigen::EigenvaluesOnly)
                                                  .eigenvalues()
                                                  .maxCoeff()));
    if (norm(m.mean.position() - ego.center.position()) <= reach + sigmas * sd) return true;
  }
  return false;
}

/// Maximum LICP of the "proceed" action over probes t_d = t + delay + h,
/// h in [0, horizon]. delay = 0 is the latency-agnostic view; delay = tau is
/// the latency-aware one. Each probe draws from its own stream derived from
/// (seed, probe index), so equal inputs give equal bits. If `stop_at` is
/// reached the scan ends early.
inline WindowRisk decision_risk(const EgoPlan& plan, const EgoMotion& ego,
                                const MixtureBelief& belief, const MotionModel& model,
                                const Extents& obstacle, double delay, const RiskWindow& window,
                                const SafetyConfig& cfg, std::uint64_t seed,
                                double stop_at = 2.0) {
  WindowRisk out;
  out.peak_time = ego.state.time + delay;
  const int probes = window.probe_count();
  for (int i = 0; i < probes; ++i) {
    const double h = i * window.probe_interval;
    const double lead = delay + h;
    const Pose2 ego_pose = rollout_pose(plan, ego, DecisionAction::proceed(), lead);
    const Footprint fp = plan.extents.at(ego_pose);
    if (!within_reach(fp, propagate(belief, lead, model), obstacle, window.prune_sigmas)) continue;
    LatencyQuery q{ego.state.time, lead, DecisionAction::proceed(), fp, belief, model, obstacle};
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const RiskEstimate r = licp(q, cfg, rng);
    ++out.evaluated;
    if (r.value > out.value) {
      out.value = r.value;
      out.std_error = r.std_error;
      out.peak_time = ego.state.time + lead;
    }
    if (out.value >= stop_at) break;
  }
  return out;
}

}  // namespace latrisk
