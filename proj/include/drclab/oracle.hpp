#pragma once

// Scripted stand-in for the human expert.
//
// The reference controller knows the true target and the actuation bias and
// solves either task from any state; it also produces the pretraining
// demonstrations. The supervisor watches the gap between the reference
// command and what the robot is about to execute and decides when to step in.

#include <cstdint>
#include <optional>
#include <variant>

#include "drclab/domain.hpp"
#include "drclab/sim.hpp"

namespace drc::oracle {

// Distance the reference controller asks the gripper to travel per tick.
inline constexpr double kReferenceStep = 0.02;

enum class CorrectionMode { kDrc, kAbsolute };

const char* to_string(CorrectionMode mode);
CorrectionMode correction_mode_from_string(const std::string& s);

struct OracleConfig {
  double trigger_distance = 0.009;
  int trigger_patience = 2;
  double release_distance = 0.0045;
  double correction_gain = 1.0;
  // Gripper disagreement (open vs closed) that counts as a deviation.
  double gripper_trigger = 0.5;
  CorrectionMode mode = CorrectionMode::kDrc;

  bool operator==(const OracleConfig&) const = default;
};

ValidationReport validate(const OracleConfig& cfg);

Pose7 reference_action(const sim::SimState& state);

struct NoIntervention {};
struct DrcVector {
  Vec6 vector{};
  std::optional<double> gripper;
};
struct AbsoluteAction {
  Pose7 pose;
};
using Decision = std::variant<NoIntervention, DrcVector, AbsoluteAction>;

inline bool intervenes(const Decision& d) {
  return !std::holds_alternative<NoIntervention>(d);
}

// Per-episode supervisor memory.
struct OracleHistory {
  int ticks_over_trigger = 0;
  bool overriding = false;
  std::int64_t emissions = 0;
};

// Pose-space gap (position and orientation, gripper excluded).
double deviation(const Pose7& a, const Pose7& b);

// `candidate` is what would be applied this tick without a new input: the
// policy action plus any live decayed offset. A new vector replaces that
// offset, so it is measured from the bare `policy_action`.
Decision decide(const sim::SimState& state, const Pose7& policy_action,
                const Pose7& candidate, const OracleConfig& cfg,
                OracleHistory& history);

double intervention_rate(const Trajectory& traj);

}  // namespace drc::oracle
