#include <doctest.h>

#include <cmath>

#include "drclab/loop.hpp"
#include "drclab/oracle.hpp"
#include "drclab/sim.hpp"
#include "support.hpp"

using namespace drc;
using testkit::Gen;

namespace {

TaskSpec unbiased(TaskFamily f) {
  TaskSpec t = default_task(f);
  t.actuation_bias = {0, 0, 0};
  return t;
}

// Raster estimate of the covered disc area on an n x n grid.
double raster_area(const std::vector<sim::WipeBand>& bands, double cx, double cz, double r,
                   int n) {
  const double cell = 2 * r / n;
  int hit = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = cx - r + (i + 0.5) * cell;
      const double z = cz - r + (j + 0.5) * cell;
      if ((x - cx) * (x - cx) + (z - cz) * (z - cz) > r * r) continue;
      for (const auto& b : bands)
        if (x >= b.x0 && x <= b.x1 && z >= b.z0 && z <= b.z1) {
          ++hit;
          break;
        }
    }
  return hit * cell * cell;
}

}  // namespace

TEST_CASE("reset is deterministic") {
  for (auto f : {TaskFamily::kHookedPick, TaskFamily::kStainWipe}) {
    const auto a = sim::reset(default_task(f), 99);
    const auto b = sim::reset(default_task(f), 99);
    CHECK(a == b);
    CHECK(a.gripper_pose == sim::kHomePose);
    CHECK_FALSE(sim::reset(default_task(f), 100) == a);
  }
}

TEST_CASE("reset targets are uniform over the region octants") {
  const TaskSpec t = default_task(TaskFamily::kHookedPick);
  const Vec3 c = t.target_region.center();
  const int n = 10000;
  std::vector<double> counts(8, 0.0);
  for (int s = 0; s < n; ++s) {
    const Vec3 p = sim::reset(t, static_cast<std::uint64_t>(s)).object_position;
    REQUIRE(t.target_region.contains(p));
    int oct = 0;
    for (int i = 0; i < 3; ++i) oct |= (p[i] >= c[i] ? 1 : 0) << i;
    counts[static_cast<std::size_t>(oct)] += 1.0;
  }
  const double expect = n / 8.0;
  const double sigma = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (double k : counts) CHECK(std::abs(k - expect) <= 3 * sigma);
  CHECK(testkit::chi2(counts, std::vector<double>(8, expect)) < testkit::chi2_crit99(7));
}

TEST_CASE("stain radius within the configured range") {
  const TaskSpec t = default_task(TaskFamily::kStainWipe);
  // 20-35 mm diameter at 500 mm per workspace unit.
  CHECK(t.stain_radius_range.first == doctest::Approx(20.0 / 500 / 2));
  CHECK(t.stain_radius_range.second == doctest::Approx(35.0 / 500 / 2));
  double lo = 1, hi = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto st = sim::reset(t, s);
    lo = std::min(lo, st.stain_radius);
    hi = std::max(hi, st.stain_radius);
    CHECK(st.stain_center[1] == sim::kWallY);
  }
  CHECK(lo >= 0.02);
  CHECK(hi <= 0.035);
  CHECK(hi - lo > 0.013);
}

TEST_CASE("reset rejects bad tasks") {
  TaskSpec t = default_task(TaskFamily::kHookedPick);
  t.target_region.lo[0] = 0.9;
  t.target_region.hi[0] = 0.1;
  CHECK_THROWS_AS(sim::reset(t, 1), Error);
  t = default_task(TaskFamily::kHookedPick);
  t.object_variant = "banana";
  CHECK_THROWS_AS(sim::reset(t, 1), Error);
}

TEST_CASE("commanding the current pose is a fixed point") {
  for (auto f : {TaskFamily::kHookedPick, TaskFamily::kStainWipe}) {
    const auto s = sim::reset(unbiased(f), 5);
    auto next = sim::step(s, s.gripper_pose);
    CHECK(next.tick == s.tick + 1);
    next.tick = s.tick;
    CHECK(next == s);
  }
}

TEST_CASE("grasp tolerance rule") {
  const TaskSpec t = unbiased(TaskFamily::kHookedPick);
  auto s = sim::reset(t, 8);
  for (double gap : {t.grasp_tolerance + 0.01, t.grasp_tolerance - 0.001}) {
    auto st = s;
    st.gripper_pose.position = add(st.object_position, Vec3{gap, 0, 0});
    Pose7 close = st.gripper_pose;
    close.gripper = 1.0;
    const auto after = sim::step(st, close);
    CHECK(after.object_attached == (gap <= t.grasp_tolerance));
  }
}

TEST_CASE("actuation bias shifts the commanded position") {
  TaskSpec t = default_task(TaskFamily::kHookedPick);
  auto s = sim::reset(t, 2);
  const auto after = sim::step(s, s.gripper_pose);
  CHECK(after.gripper_pose.position[0] == doctest::Approx(s.gripper_pose.position[0] + 0.02));
  CHECK(after.gripper_pose.position[1] == doctest::Approx(s.gripper_pose.position[1] + 0.01));
}

TEST_CASE("displacement cap holds for arbitrary commands") {
  Gen g(12);
  for (auto f : {TaskFamily::kHookedPick, TaskFamily::kStainWipe}) {
    auto s = sim::reset(default_task(f), 3);
    for (int k = 0; k < 299 && !s.terminated; ++k) {
      Pose7 a{g.vec3(-0.5, 1.5), g.vec3(-4, 4), g.uni(0, 1)};
      const auto n = sim::step(s, a);
      CHECK(norm(sub(n.gripper_pose.position, s.gripper_pose.position)) <=
            sim::kPositionCap + 1e-12);
      CHECK(norm(sub(n.gripper_pose.orientation, s.gripper_pose.orientation)) <=
            sim::kOrientationCap + 1e-12);
      for (double x : n.gripper_pose.position) CHECK((x >= 0.0 && x <= 1.0));
      s = n;
    }
  }
}

TEST_CASE("reference controller delivers with the phases in order") {
  const TaskSpec t = unbiased(TaskFamily::kHookedPick);
  auto s = sim::reset(t, 21);
  std::vector<TaskPhase> seen{s.phase};
  while (!s.terminated) {
    s = sim::step(s, oracle::reference_action(s));
    if (s.phase != seen.back()) seen.push_back(s.phase);
    if (s.object_attached) CHECK(s.object_position == s.gripper_pose.position);
  }
  CHECK(seen == std::vector<TaskPhase>{TaskPhase::kNone, TaskPhase::kGrasped,
                                       TaskPhase::kDisengaged, TaskPhase::kDelivered});
  CHECK(s.delivered);
}

TEST_CASE("wiped fraction never decreases and a full wipe scores 1") {
  const TaskSpec t = unbiased(TaskFamily::kStainWipe);
  auto s = sim::reset(t, 4);
  double prev = 0.0;
  std::vector<StepRecord> steps;
  while (!s.terminated) {
    StepRecord r;
    r.tick = s.tick;
    r.applied_action = oracle::reference_action(s);
    s = sim::step(s, r.applied_action);
    CHECK(s.wiped_fraction >= prev);
    prev = s.wiped_fraction;
    steps.push_back(r);
  }
  CHECK(s.phase == TaskPhase::kWiped);
  CHECK(sim::score_state(s, steps).score == 1.0);
}

TEST_CASE("score rubric") {
  SUBCASE("full delivery") {
    const auto tr = loop::run_reference_episode(unbiased(TaskFamily::kHookedPick), 6);
    CHECK(tr.outcome.score == 1.0);
    CHECK(tr.outcome.phase_reached == TaskPhase::kDelivered);
  }
  SUBCASE("grasp and disengage, then time out") {
    const TaskSpec t = unbiased(TaskFamily::kHookedPick);
    auto s = sim::reset(t, 6);
    Trajectory tr{t, 6, {}, {}};
    while (!s.terminated) {
      StepRecord r;
      r.tick = s.tick;
      r.applied_action = s.phase == TaskPhase::kDisengaged ? s.gripper_pose
                                                           : oracle::reference_action(s);
      r.policy_action = r.applied_action;
      s = sim::step(s, r.applied_action);
      tr.steps.push_back(r);
    }
    CHECK(s.tick == sim::kEpisodeBudget);
    const auto o = sim::score(tr);
    CHECK(o.score == 0.5);
    CHECK(o.phase_reached == TaskPhase::kDisengaged);
    CHECK(o.ticks_used == sim::kEpisodeBudget);
  }
  SUBCASE("wipe fractions") {
    auto s = sim::reset(default_task(TaskFamily::kStainWipe), 1);
    const std::vector<StepRecord> one(1);
    s.wiped_fraction = 0.4;
    CHECK(sim::score_state(s, one).score == 0.0);
    s.wiped_fraction = 0.5;
    CHECK(sim::score_state(s, one).score == 0.0);
    s.wiped_fraction = 0.6;
    CHECK(sim::score_state(s, one).score == 0.5);
    s.wiped_fraction = 1.0 - 5e-7;
    CHECK(sim::score_state(s, one).score == 1.0);
  }
  SUBCASE("nothing happened") {
    auto s = sim::reset(default_task(TaskFamily::kHookedPick), 1);
    CHECK(sim::score_state(s, std::vector<StepRecord>(3)).score == 0.0);
  }
  SUBCASE("empty trajectory") {
    Trajectory tr;
    tr.task = default_task(TaskFamily::kHookedPick);
    CHECK_THROWS_AS(sim::score(tr), Error);
  }
}

TEST_CASE("rescoring equals the stored outcome") {
  for (auto f : {TaskFamily::kHookedPick, TaskFamily::kStainWipe})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto tr = loop::run_reference_episode(default_task(f), seed);
      CHECK(sim::score(tr) == tr.outcome);
    }
}

TEST_CASE("covered disc area agrees with a raster count") {
  Gen g(77);
  for (int c = 0; c < 30; ++c) {
    const double r = g.uni(0.02, 0.035);
    const double cx = 0.5, cz = 0.5;
    std::vector<sim::WipeBand> bands;
    const int nb = g.range(1, 6);
    for (int b = 0; b < nb; ++b) {
      const double x = g.uni(0.42, 0.58), z = g.uni(0.42, 0.58);
      bands.push_back({x - g.uni(0.005, 0.05), x + g.uni(0.005, 0.05), z - g.uni(0.003, 0.04),
                       z + g.uni(0.003, 0.04)});
    }
    const double exact = sim::covered_disc_area(bands, cx, cz, r);
    const double approx = raster_area(bands, cx, cz, r, 600);
    CHECK(std::abs(exact - approx) <= 0.01 * kPi * r * r);
    CHECK(exact <= kPi * r * r * (1 + 1e-12));
  }
  // A band covering the whole disc.
  CHECK(sim::covered_disc_area({{0, 1, 0, 1}}, 0.5, 0.5, 0.03) ==
        doctest::Approx(kPi * 0.03 * 0.03).epsilon(1e-12));
  CHECK(sim::covered_disc_area({}, 0.5, 0.5, 0.03) == 0.0);
  // Half-plane: exactly half the disc.
  CHECK(sim::covered_disc_area({{0, 1, 0, 0.5}}, 0.5, 0.5, 0.03) ==
        doctest::Approx(kPi * 0.03 * 0.03 / 2).epsilon(1e-12));
}

TEST_CASE("variants shift the sighting and carry their appearance") {
  TaskSpec t = unbiased(TaskFamily::kHookedPick);
  t.sensing_noise_std = 0.0;
  for (const char* v : {"raspberry", "orange_tomato", "green_tomato"}) {
    t.object_variant = v;
    const auto s = sim::reset(t, 3);
    const auto o = sim::observe(s);
    const auto vp = sim::variant_profile(v);
    for (int i = 0; i < 3; ++i)
      CHECK(o.target_sighting[i] == doctest::Approx(s.object_position[i] + vp.sighting_offset[i]));
    CHECK(o.appearance == vp.appearance);
  }
  // Similarity ordering: green sits farther from the base than orange.
  CHECK(norm(sim::variant_profile("green_tomato").sighting_offset) >
        norm(sim::variant_profile("orange_tomato").sighting_offset));
}

TEST_CASE("observation noise is reproducible and has the configured spread") {
  const TaskSpec t = default_task(TaskFamily::kHookedPick);
  auto s = sim::reset(t, 10);
  CHECK(sim::observe(s) == sim::observe(s));
  double sum = 0, sq = 0;
  const int n = 4000;
  for (int k = 0; k < n; ++k) {
    s.tick = k;
    const double e = sim::observe(s).target_sighting[0] - s.object_position[0];
    sum += e;
    sq += e * e;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 4 * t.sensing_noise_std / std::sqrt(n));
  CHECK(sd == doctest::Approx(t.sensing_noise_std).epsilon(0.05));
}

TEST_CASE("intervention rate ratio") {
  std::vector<StepRecord> steps(100);
  CHECK(sim::intervention_rate(steps) == 0.0);
  for (int i = 0; i < 30; ++i) steps[static_cast<std::size_t>(i)].intervention_flag = true;
  CHECK(sim::intervention_rate(steps) == 0.3);
  for (auto& s : steps) s.intervention_flag = true;
  CHECK(sim::intervention_rate(steps) == 1.0);
  CHECK_THROWS_AS(sim::intervention_rate({}), Error);
}
