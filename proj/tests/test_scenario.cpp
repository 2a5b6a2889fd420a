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

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "latrisk/scenario.hpp"

using namespace latrisk;

namespace {

const ScenarioKind kKinds[] = {ScenarioKind::kMerge, ScenarioKind::kRightTurn, ScenarioKind::kLeftTurn};

// Right-turn scene where the obstacle reaches the conflict point exactly
// when the ego does.
ScenarioConfig guaranteed_conflict() {
  auto c = ScenarioConfig::defaults(ScenarioKind::kRightTurn);
  c.spawn_jitter = 0.0;
  c.arrival_offset = 0.0;
  c.obstacle_speed = {10.0, 10.0};
  return c;
}

}  // namespace

TEST(Geometry, EgoStartsAtApproachDistanceBeforeManeuver) {
  for (auto k : kKinds) {
    const auto c = ScenarioConfig::defaults(k);
    const Scene s = build_scenario(c, 1);
    const auto& plan = s.geometry->plan;
    EXPECT_DOUBLE_EQ(s.geometry->maneuver_start_arc, 90.0);
    EXPECT_NEAR(plan.path.curvature_at(89.0), 0.0, 1e-12);
    EXPECT_GT(std::abs(plan.path.curvature_at(91.0)), 0.0);
    EXPECT_NEAR(plan.reference.samples().back().time, 9.5, 1e-9);
    EXPECT_EQ(plan.reference.samples().front().pose.x, 0.0);
    // The conflict lies inside the maneuver.
    EXPECT_GT(s.geometry->conflict_time, 90.0 / s.ego_speed);
    EXPECT_LT(s.geometry->conflict_time, 90.0 / s.ego_speed + c.maneuver_duration);
  }
}

TEST(Geometry, ObstacleReachesConflictPointAtArrivalTime) {
  const auto c = guaranteed_conflict();
  const Scene s = build_scenario(c, 1);
  ASSERT_TRUE(s.obstacle);
  const Pose2 p = s.obstacle->pose_at(s.obstacle->arrival_time);
  EXPECT_NEAR(p.x, s.geometry->conflict_point.x, 1e-9);
  EXPECT_NEAR(p.y, s.geometry->conflict_point.y, 1e-9);
  EXPECT_NEAR(s.obstacle->arrival_time, s.geometry->conflict_time, 1e-12);
  EXPECT_NEAR(s.obstacle->visible_from, s.obstacle->arrival_time - 3.0, 1e-9);
}

TEST(Trial, DeterministicForSeed) {
  for (auto k : kKinds) {
    const auto c = ScenarioConfig::defaults(k);
    const auto a = run_trial(c, 17), b = run_trial(c, 17);
    EXPECT_EQ(a.collided, b.collided);
    EXPECT_EQ(a.collision_time, b.collision_time);
    EXPECT_EQ(a.decisions.size(), b.decisions.size());
    ASSERT_EQ(a.ego_log.size(), b.ego_log.size());
    for (std::size_t i = 0; i < a.ego_log.size(); ++i) {
      ASSERT_EQ(a.ego_log[i].x, b.ego_log[i].x);
      ASSERT_EQ(a.ego_log[i].y, b.ego_log[i].y);
    }
  }
}

TEST(Trial, ObstacleFreeRunFollowsReferenceToCap) {
  auto c = ScenarioConfig::defaults(ScenarioKind::kLeftTurn);
  c.obstacle_enabled = false;
  const auto r = run_trial(c, 3);
  EXPECT_FALSE(r.collided);
  EXPECT_FALSE(r.braked);
  EXPECT_TRUE(r.decisions.empty());
  EXPECT_NEAR(r.final_time, c.time_cap + c.step, 1e-9);
  EXPECT_FALSE(replay_collision(r, c.ego_extents, c.obstacle_extents));
}

TEST(Trial, GuaranteedConflictCollidesWithoutDecisions) {
  auto c = guaranteed_conflict();
  c.decisions_enabled = false;
  const auto r = run_trial(c, 1);
  EXPECT_TRUE(r.collided);
  EXPECT_TRUE(replay_collision(r, c.ego_extents, c.obstacle_extents));
  EXPECT_EQ(r.min_clearance, 0.0);
}

TEST(Trial, GuaranteedConflictAvoidedAtZeroLatency) {
  auto c = guaranteed_conflict();
  c.policy = Policy::kLavqa;
  c.latency = LatencyModel::fixed(0.0);
  const auto r = run_trial(c, 1);
  EXPECT_FALSE(r.collided);
  EXPECT_TRUE(r.braked);
  ASSERT_FALSE(r.decisions.empty());
  double first_brake = -1.0;
  for (const auto& d : r.decisions) {
    if (d.option == c.question.negative && d.applied) {
      first_brake = d.apply_at;
      break;
    }
  }
  EXPECT_GT(first_brake, 0.0);
  EXPECT_LT(first_brake, c.straight_duration);
  EXPECT_FALSE(replay_collision(r, c.ego_extents, c.obstacle_extents));
}

TEST(Trial, GuaranteedConflictCollidesForSlowBaseline) {
  auto c = guaranteed_conflict();
  c.policy = Policy::kBaseline;
  c.latency = LatencyModel::fixed(0.4);
  EXPECT_TRUE(run_trial(c, 1).collided);
}

TEST(Trial, RightTurnFirstTriggerStep) {
  const auto c = ScenarioConfig::defaults(ScenarioKind::kRightTurn);
  const auto r = run_trial(c, 1);
  ASSERT_FALSE(r.decisions.empty());
  EXPECT_LT(r.decisions.front().issued_at, c.straight_duration);
  EXPECT_DOUBLE_EQ(r.decisions.front().issued_at, 1.82);
}

TEST(Trial, DecisionsNeverApplyEarly) {
  for (auto k : kKinds) {
    auto c = ScenarioConfig::defaults(k);
    c.latency = {{0.25, 0.05}, {0.05, 0.02}};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto r = run_trial(c, seed);
      for (const auto& d : r.decisions) {
        EXPECT_GE(d.apply_at, d.issued_at + d.latency - 1e-9);
        EXPECT_LT(d.apply_at, d.issued_at + d.latency + c.step);
      }
    }
  }
}

TEST(Trial, CollisionFlagMatchesReplay) {
  auto c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  c.policy = Policy::kBaseline;
  c.latency = LatencyModel::fixed(0.4);
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto r = run_trial(c, seed);
    EXPECT_EQ(r.collided, replay_collision(r, c.ego_extents, c.obstacle_extents)) << seed;
  }
}

TEST(Batch, SmokeAndThreadIndependence) {
  auto c = ScenarioConfig::defaults(ScenarioKind::kLeftTurn);
  c.trials = 10;
  c.latency = LatencyModel::fixed(0.3);
  c.threads = 1;
  const auto one = run_batch(c);
  c.threads = 4;
  const auto four = run_batch(c);
  EXPECT_EQ(one.trials, 10);
  EXPECT_EQ(to_json(one).dump(), to_json(four).dump());
  std::set<std::uint64_t> seeds;
  for (const auto& r : one.results) seeds.insert(r.seed);
  EXPECT_EQ(seeds.size(), 10u);
}

TEST(Batch, ReductionRatioFormatting) {
  BatchReport b, l;
  b.trials = l.trials = 100;
  b.collisions = 36;
  l.collisions = 4;
  EXPECT_EQ(reduction_ratio(b, l), "9.00x");
  l.collisions = 0;
  EXPECT_EQ(reduction_ratio(b, l), ">=36x");
  EXPECT_TRUE(std::isinf(reduction_value(b, l)));
}

TEST(Batch, ComparisonCsvColumns) {
  ComparisonRow row;
  row.latency = 0.2;
  row.baseline.policy = Policy::kBaseline;
  row.baseline.trials = row.lavqa.trials = 100;
  row.baseline.collisions = 30;
  row.lavqa.collisions = 10;
  std::istringstream in(comparison_csv({row}));
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  EXPECT_EQ(header, "scenario,latency_ms,method,collisions,trials,collision_rate,reduction_ratio");
  EXPECT_EQ(a, "merge,200,baseline,30,100,0.3,");
  EXPECT_EQ(b, "merge,200,lavqa,10,100,0.1,3.00x");
}

TEST(Config, JsonRoundTripAndDigest) {
  for (auto k : kKinds) {
    auto c = ScenarioConfig::defaults(k);
    c.latency = {{0.2, 0.03}, {0.05, 0.01}};
    c.master_seed = 99;
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
    EXPECT_EQ(config_digest(back), config_digest(c));
  }
  auto a = ScenarioConfig::defaults(ScenarioKind::kMerge), b = a;
  b.safety.lambda = 0.25;
  EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(Config, ValidationRejectsBadValues) {
  auto c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  c.step = 0.02;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  c.obstacle_speed = {5.0, 4.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  c.trials = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(config_from_json(Json{{"kind", "roundabout"}}), std::invalid_argument);
}

TEST(Trace, BaselineIsShiftedGroundTruth) {
  const auto c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  const auto tr = perceived_risk_trace(c, 4, {0.1, 0.3});
  ASSERT_GT(tr.points.size(), 100u);
  for (std::size_t k = 30; k < tr.points.size(); ++k) {
    ASSERT_EQ(tr.points[k].baseline[0], tr.points[k - 10].ground_truth);
    ASSERT_EQ(tr.points[k].baseline[1], tr.points[k - 30].ground_truth);
  }
  const std::string csv = trace_csv(tr);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "t,ground_truth,baseline_100ms,baseline_300ms,lavqa_100ms,lavqa_300ms");
}

TEST(Trace, FirstCrossing) {
  EXPECT_EQ(first_crossing({0, 1, 2}, {0.1, 0.3, 0.5}, 0.3), 1.0);
  EXPECT_LT(first_crossing({0, 1}, {0.1, 0.2}, 0.3), 0.0);
}

TEST(Sweep, ApproachSnapshotHasObstacleRisk) {
  const auto c = ScenarioConfig::defaults(ScenarioKind::kMerge);
  const auto grids = licom_sweep_on_approach(c, 4, {0.2, 0.4}, 30.0, 0.5, 5.0);
  ASSERT_EQ(grids.size(), 2u);
  EXPECT_EQ(grids[0].spec.width, 60);
  EXPECT_EQ(grids[0].tau, 0.2);
  EXPECT_GT(count_unsafe(grids[1], c.safety.lambda), 0u);
}
