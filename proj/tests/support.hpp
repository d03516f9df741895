#pragma once

// Helpers shared by the test files: seeded generators, a few independent
// reference computations and small fixtures.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "drclab/domain.hpp"
#include "drclab/loop.hpp"
#include "drclab/policy.hpp"

namespace testkit {

using namespace drc;

// Independent generator (not the library Rng) so fixtures don't share a
// stream with the code under test.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : e_(seed) {}
  double uni(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(e_() >> 11) * 0x1.0p-53);
  }
  int range(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(e_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  bool coin(double p = 0.5) { return uni(0, 1) < p; }
  std::uint64_t bits() { return e_(); }
  Vec3 vec3(double lo, double hi) { return {uni(lo, hi), uni(lo, hi), uni(lo, hi)}; }
  Vec6 vec6(double lo, double hi) {
    Vec6 v{};
    for (double& x : v) x = uni(lo, hi);
    return v;
  }
  Pose7 pose() {
    return Pose7{vec3(0.1, 0.9), vec3(-0.3, 0.3), uni(0, 1)};
  }

 private:
  std::mt19937_64 e_;
};

// Upper 99% point of chi-square with `df` degrees of freedom
// (Wilson-Hilferty; accurate to well under 1% for df >= 3).
inline double chi2_crit99(int df) {
  const double z = 2.3263478740408408;
  const double k = static_cast<double>(df);
  const double a = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

inline double chi2(const std::vector<double>& observed, const std::vector<double>& expected) {
  double s = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double d = observed[i] - expected[i];
    s += d * d / expected[i];
  }
  return s;
}

// Ignores the world and heads for one fixed pose; counts queries.
class FixedPolicy final : public policy::Policy {
 public:
  explicit FixedPolicy(Pose7 p) : pose_(p) {}
  std::vector<Pose7> predict(const Observation&) const override {
    ++calls;
    return std::vector<Pose7>(16, pose_);
  }
  int horizon() const override { return 16; }
  int execute_steps() const override { return 8; }
  mutable std::atomic<int> calls{0};

 private:
  Pose7 pose_;
};

// Small, quick plan for pipeline plumbing tests.
inline loop::ExperimentPlan tiny_plan(std::uint64_t seed,
                                      TaskFamily family = TaskFamily::kHookedPick) {
  loop::ExperimentPlan p = loop::default_plan(family, seed);
  p.n_demos = 4;
  p.rounds = 1;
  p.corrections_per_round = 2;
  p.eval_trials = 2;
  p.train.epochs = 3;
  p.update_epochs = 2;
  p.hidden_widths = {8};
  return p;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("drclab-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Trajectory with synthetic but valid content, `n` steps.
inline Trajectory synthetic_trajectory(Gen& g, std::size_t n, bool corrected) {
  Trajectory t;
  t.task = default_task(TaskFamily::kHookedPick);
  t.seed = g.bits();
  for (std::size_t k = 0; k < n; ++k) {
    StepRecord r;
    r.tick = static_cast<std::int64_t>(k);
    r.observation.gripper_pose = g.pose();
    r.observation.target_sighting = g.vec3(0, 1);
    r.observation.contact_flag = g.coin();
    r.observation.task_phase_hint = g.uni(0, 1);
    r.observation.appearance = g.uni(0, 1);
    r.policy_action = g.pose();
    r.applied_action = g.pose();
    if (corrected && g.coin(0.3)) {
      r.correction_event = g.vec6(-0.05, 0.05);
      r.mode = ControlMode::kDrcCorrecting;
      r.intervention_flag = true;
    }
    t.steps.push_back(r);
  }
  t.outcome.score = 0.5;
  t.outcome.phase_reached = TaskPhase::kDisengaged;
  t.outcome.ticks_used = static_cast<std::int64_t>(n);
  std::size_t flagged = 0;
  for (const auto& s : t.steps) flagged += s.intervention_flag;
  t.outcome.intervention_rate = static_cast<double>(flagged) / static_cast<double>(n);
  return t;
}

}  // namespace testkit
