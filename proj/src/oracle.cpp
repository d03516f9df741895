#include "drclab/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace drc::oracle {

const char* to_string(CorrectionMode mode) {
  return mode == CorrectionMode::kDrc ? "drc" : "absolute";
}

CorrectionMode correction_mode_from_string(const std::string& s) {
  if (s == "drc") return CorrectionMode::kDrc;
  if (s == "absolute") return CorrectionMode::kAbsolute;
  throw Error(ErrorCode::kInvalidArgument, "unknown correction mode '" + s + "'");
}

ValidationReport validate(const OracleConfig& cfg) {
  ValidationReport r;
  if (!(cfg.release_distance < cfg.trigger_distance))
    r.push_back("release_distance < trigger_distance");
  if (cfg.trigger_patience < 1) r.push_back("trigger_patience >= 1");
  if (!(cfg.correction_gain > 0.0 && cfg.correction_gain <= 1.5))
    r.push_back("correction_gain in (0,1.5]");
  if (!(cfg.gripper_trigger > 0.0 && cfg.gripper_trigger <= 1.0))
    r.push_back("gripper_trigger in (0,1]");
  return r;
}

namespace {

constexpr double kArrived = 1e-6;
// Slack for closed-loop use, where corrected arms never land exactly.
constexpr double kNear = 0.01;
constexpr double kLineSlack = 0.01;
constexpr double kDropSlack = 0.03;
// Final approach runs along +y from a point in front of the object.
constexpr double kPreGraspBack = 0.04;
constexpr double kApproachStep = 0.014;
constexpr double kLiftStep = 0.01;
constexpr double kGripRamp = 0.2;
constexpr double kRetreatY = 0.40;
constexpr double kLiftClearance = 0.01;
constexpr double kStandoff = 0.06;
constexpr double kWipeMargin = 0.05;
constexpr double kPress = 0.01;
const Vec3 kDropPoint{0.85, 0.20, 0.25};

Vec3 step_toward(const Vec3& from, const Vec3& goal,
                 double max_step = kReferenceStep) {
  const Vec3 d = sub(goal, from);
  const double n = norm(d);
  if (n <= max_step) return goal;
  return add(from, scale(d, max_step / n));
}

// Turns a desired next gripper position into a command by undoing the bias.
Pose7 command(const sim::SimState& s, const Vec3& next, double gripper) {
  return Pose7{sub(next, s.task.actuation_bias), {0.0, 0.0, 0.0},
               std::clamp(gripper, 0.0, 1.0)};
}

Pose7 hooked_pick(const sim::SimState& s) {
  const Vec3& pos = s.gripper_pose.position;
  const double g = s.gripper_pose.gripper;
  if (s.delivered || s.dropped) return command(s, pos, g);

  if (!s.object_attached) {
    if (g >= 0.5) return command(s, pos, 0.0);  // empty grasp: reopen
    const Vec3& obj = s.object_position;
    if (norm(sub(obj, pos)) <= kNear)
      return command(s, step_toward(pos, obj, kApproachStep), g + kGripRamp);
    const bool on_line = std::abs(pos[0] - obj[0]) <= kLineSlack &&
                         std::abs(pos[2] - obj[2]) <= kLineSlack &&
                         pos[1] <= obj[1] + kNear &&
                         pos[1] >= obj[1] - kPreGraspBack - kLineSlack;
    if (on_line) return command(s, step_toward(pos, obj, kApproachStep), 0.0);
    const Vec3 pre{obj[0], obj[1] - kPreGraspBack, obj[2]};
    return command(s, step_toward(pos, pre), 0.0);
  }
  if (s.hook_engaged) {
    // Finish closing in place before lifting off the hook.
    if (g < 1.0) return command(s, pos, g + kGripRamp);
    const Vec3 lifted{s.hang_point[0], s.hang_point[1],
                      s.hang_point[2] + sim::kLiftDelta + kLiftClearance};
    return command(s, step_toward(pos, lifted, kLiftStep), 1.0);
  }
  if (pos[1] > kRetreatY + kArrived) {
    const Vec3 back{pos[0], kRetreatY - kLiftClearance, pos[2]};
    return command(s, step_toward(pos, back), 1.0);
  }
  if (norm(sub(kDropPoint, pos)) <= kDropSlack)
    return command(s, step_toward(pos, kDropPoint), g - kGripRamp);
  return command(s, step_toward(pos, kDropPoint), 1.0);
}

Pose7 stain_wipe(const sim::SimState& s) {
  const Vec3& pos = s.gripper_pose.position;
  const Vec3& c = s.stain_center;
  const double y_standoff = sim::kWallY - kStandoff;
  const double z_start = c[2] - kWipeMargin;
  const double z_end = c[2] + kWipeMargin;
  const double y_press = sim::kWallY + kPress;

  if (s.in_contact) {
    if (pos[2] < z_end - kArrived)
      return command(s, {c[0], y_press, std::min(pos[2] + kReferenceStep, z_end)},
                     0.0);
    return command(s, step_toward(pos, {pos[0], y_standoff, pos[2]}), 0.0);
  }
  const bool aligned = std::abs(pos[0] - c[0]) <= kLineSlack &&
                       std::abs(pos[2] - z_start) <= kLineSlack;
  if (aligned && pos[1] >= y_standoff - kLineSlack)
    return command(s, step_toward(pos, {c[0], y_press, z_start}), 0.0);
  // Realign without backing away from the wall.
  return command(
      s, step_toward(pos, {c[0], std::max(pos[1], y_standoff), z_start}), 0.0);
}

}  // namespace

Pose7 reference_action(const sim::SimState& state) {
  return state.task.family == TaskFamily::kHookedPick ? hooked_pick(state)
                                                      : stain_wipe(state);
}

double deviation(const Pose7& a, const Pose7& b) {
  return norm(sub(a.pose6(), b.pose6()));
}

Decision decide(const sim::SimState& state, const Pose7& policy_action,
                const Pose7& candidate, const OracleConfig& cfg,
                OracleHistory& history) {
  const Pose7 ref = reference_action(state);
  const double dev = deviation(ref, candidate);
  const bool gripper_off =
      std::abs(ref.gripper - candidate.gripper) > cfg.gripper_trigger;

  if (cfg.mode == CorrectionMode::kAbsolute && history.overriding) {
    if (dev < cfg.release_distance && !gripper_off) {
      history.overriding = false;
      history.ticks_over_trigger = 0;
      return NoIntervention{};
    }
    ++history.emissions;
    return AbsoluteAction{ref};
  }

  history.ticks_over_trigger = dev > cfg.trigger_distance || gripper_off
                                   ? history.ticks_over_trigger + 1
                                   : 0;
  if (history.ticks_over_trigger < cfg.trigger_patience) return NoIntervention{};

  history.ticks_over_trigger = 0;
  ++history.emissions;
  if (cfg.mode == CorrectionMode::kAbsolute) {
    history.overriding = true;
    return AbsoluteAction{ref};
  }
  DrcVector v{scale(sub(ref.pose6(), policy_action.pose6()), cfg.correction_gain),
              std::nullopt};
  if (gripper_off) v.gripper = ref.gripper;
  return v;
}

double intervention_rate(const Trajectory& traj) {
  return sim::intervention_rate(traj.steps);
}

}  // namespace drc::oracle
