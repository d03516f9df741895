#pragma once

// Deterministic kinematic world for the two task families.
//
// HookedPick: a small object hangs from a hook somewhere in the target
// region. The gripper must close within grasp_tolerance of it, lift it by at
// least kLiftDelta to free it from the hook, and open inside the bin.
//
// StainWipe: a circular stain sits on the wall plane y = kWallY. The cloth
// tip must touch the wall and sweep across the stain; every tick spent in
// contact wipes a band of width kClothWidth.
//
// Commands are absolute poses. The gripper moves toward the commanded
// position (plus the task's actuation bias) by at most kPositionCap per tick.

#include <cstdint>
#include <vector>

#include "drclab/domain.hpp"

namespace drc::sim {

inline constexpr double kPositionCap = 0.025;
inline constexpr double kOrientationCap = 0.1;
inline constexpr double kLiftDelta = 0.04;
inline constexpr double kWallY = 0.85;
inline constexpr double kContactTolerance = 0.004;
inline constexpr double kClothWidth = 0.08;
inline constexpr double kClothHeight = 0.01;
inline constexpr double kWipeCompleteEps = 1e-6;
inline constexpr std::int64_t kEpisodeBudget = 300;

inline const Pose7 kHomePose{{0.5, 0.15, 0.5}, {0.0, 0.0, 0.0}, 0.0};
inline const Box kBin{{0.75, 0.10, 0.0}, {0.95, 0.30, 0.35}};

// How an object variant looks to the sensors.
struct VariantProfile {
  Vec3 sighting_offset{};
  double noise_scale = 1.0;
  double appearance = 0.0;
};

// Known variants: raspberry, orange_tomato, green_tomato, stain.
VariantProfile variant_profile(const std::string& variant);

// Axis-aligned patch of the wall (x horizontal, z vertical).
struct WipeBand {
  double x0 = 0, x1 = 0, z0 = 0, z1 = 0;
  bool operator==(const WipeBand&) const = default;
};

struct SimState {
  TaskSpec task;
  Pose7 gripper_pose = kHomePose;
  bool object_attached = false;
  Vec3 object_position{};
  Vec3 hang_point{};
  bool hook_engaged = true;
  bool delivered = false;
  bool dropped = false;
  Vec3 stain_center{};
  double stain_radius = 0.0;
  double wiped_fraction = 0.0;
  std::vector<WipeBand> wiped_bands;
  bool in_contact = false;
  TaskPhase phase = TaskPhase::kNone;
  std::int64_t tick = 0;
  // Key of the counter-based generator behind observation noise.
  std::uint64_t noise_key = 0;
  bool terminated = false;

  bool operator==(const SimState&) const = default;
};

SimState reset(const TaskSpec& task, std::uint64_t seed);
SimState step(const SimState& state, const Pose7& action);
Observation observe(const SimState& state);

// Position of the thing the robot is after (object or stain centre).
Vec3 true_target(const SimState& state);

// Area of (union of bands) intersected with the disc, computed exactly.
double covered_disc_area(const std::vector<WipeBand>& bands, double cx,
                         double cz, double radius);

// Replays the trajectory's applied actions from reset and grades the result.
EpisodeOutcome score(const Trajectory& traj);
EpisodeOutcome score_state(const SimState& final_state,
                           const std::vector<StepRecord>& steps);

double intervention_rate(const std::vector<StepRecord>& steps);

}  // namespace drc::sim
