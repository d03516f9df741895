#pragma once

// Shared value types for the correction lab. Everything here is a plain
// value: cheap to copy, safe to hand across threads.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drclab/core.hpp"

namespace drc {

// Gripper pose plus gripper channel. Position lives in the unit-cube
// workspace, orientation is an axis-angle vector in radians and the gripper
// channel runs from 0 (open) to 1 (closed).
struct Pose7 {
  Vec3 position{};
  Vec3 orientation{};
  double gripper = 0.0;

  Vec6 pose6() const {
    return {position[0], position[1], position[2],
            orientation[0], orientation[1], orientation[2]};
  }
  static Pose7 from6(const Vec6& v, double gripper) {
    return Pose7{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, gripper};
  }
  bool finite() const {
    return all_finite(position) && all_finite(orientation) &&
           std::isfinite(gripper);
  }

  bool operator==(const Pose7&) const = default;
};

// Shrinks an axis-angle vector back onto the ball of radius pi.
Vec3 clamp_rotation(const Vec3& axis_angle);

struct Observation {
  Pose7 gripper_pose;
  Vec3 target_sighting{};
  bool contact_flag = false;
  double task_phase_hint = 0.0;
  // Visual identity of the target object; stands in for the camera's view of
  // its colour so variant-specific behaviour can be learned.
  double appearance = 0.0;

  bool operator==(const Observation&) const = default;
};

enum class ControlMode { kAutonomous, kDrcCorrecting, kAbsoluteOverride };

const char* to_string(ControlMode mode);
ControlMode control_mode_from_string(const std::string& s);

struct CorrectionState {
  ControlMode mode = ControlMode::kAutonomous;
  Vec6 offset_vector{};
  double decay_rate = 0.1;
  std::int64_t last_input_tick = 0;
  std::optional<double> gripper_override;

  bool operator==(const CorrectionState&) const = default;
};

struct StepRecord {
  std::int64_t tick = 0;
  Observation observation;
  Pose7 policy_action;
  Pose7 applied_action;
  std::optional<Vec6> correction_event;
  ControlMode mode = ControlMode::kAutonomous;
  bool intervention_flag = false;

  bool operator==(const StepRecord&) const = default;
};

enum class TaskFamily { kHookedPick, kStainWipe };

const char* to_string(TaskFamily family);
TaskFamily task_family_from_string(const std::string& s);

struct Box {
  Vec3 lo{};
  Vec3 hi{};

  bool contains(const Vec3& p) const {
    for (int i = 0; i < 3; ++i)
      if (p[i] < lo[i] || p[i] > hi[i]) return false;
    return true;
  }
  Vec3 center() const {
    return {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
  }
  // Same centre, every extent multiplied by factor.
  Box scaled(double factor) const;

  bool operator==(const Box&) const = default;
};

struct TaskSpec {
  TaskFamily family = TaskFamily::kHookedPick;
  Box target_region;
  std::string object_variant = "raspberry";
  double grasp_tolerance = 0.016;
  std::pair<double, double> stain_radius_range{0.02, 0.035};
  Vec3 actuation_bias{};
  double sensing_noise_std = 0.002;

  bool operator==(const TaskSpec&) const = default;
};

// Defaults for the two task families. Deployment bias defaults to
// (0.02, 0.01, 0) workspace units.
TaskSpec default_task(TaskFamily family);

enum class TaskPhase {
  kNone,
  kGrasped,
  kDisengaged,
  kDelivered,
  kContact,
  kHalfWiped,
  kWiped,
};

const char* to_string(TaskPhase phase);
TaskPhase task_phase_from_string(const std::string& s);

struct EpisodeOutcome {
  double score = 0.0;
  TaskPhase phase_reached = TaskPhase::kNone;
  std::int64_t ticks_used = 0;
  double intervention_rate = 0.0;

  bool operator==(const EpisodeOutcome&) const = default;
};

struct Trajectory {
  TaskSpec task;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  EpisodeOutcome outcome;

  bool operator==(const Trajectory&) const = default;
};

enum class DatasetLabel { kPretraining, kHumanCorrected };

const char* to_string(DatasetLabel label);
DatasetLabel dataset_label_from_string(const std::string& s);

struct Dataset {
  DatasetLabel label = DatasetLabel::kPretraining;
  std::vector<Trajectory> trajectories;

  bool empty() const { return trajectories.empty(); }
  bool operator==(const Dataset&) const = default;
};

struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool operator==(const Normalization&) const = default;
};

// Feed-forward regressor parameters. `widths` lists every layer width from
// the input features to the flattened action chunk; weights are stored layer
// by layer as a row-major (out x in) matrix followed by its bias.
struct PolicyParams {
  std::vector<int> widths;
  std::vector<double> weights;
  Normalization observation_norm;
  Normalization action_norm;
  int horizon = 16;
  int execute_steps = 8;

  bool operator==(const PolicyParams&) const = default;
};

std::size_t weight_count(const std::vector<int>& widths);

// Invariant checks. An empty report means the value is well formed.
using ValidationReport = std::vector<std::string>;

ValidationReport validate(const Pose7& pose);
ValidationReport validate(const Observation& obs);
ValidationReport validate(const CorrectionState& state);
ValidationReport validate(const StepRecord& record);
ValidationReport validate(const TaskSpec& task);
ValidationReport validate(const EpisodeOutcome& outcome);
ValidationReport validate(const Trajectory& traj);
ValidationReport validate(const Dataset& dataset);
ValidationReport validate(const PolicyParams& params);

}  // namespace drc
