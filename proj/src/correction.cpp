#include "drclab/correction.hpp"

#include <cmath>

namespace drc {

const char* to_string(PedalKind kind) {
  switch (kind) {
    case PedalKind::kPressDrc: return "press-drc";
    case PedalKind::kPressAbsolute: return "press-absolute";
    case PedalKind::kRelease: return "release";
  }
  return "?";
}

PedalKind pedal_kind_from_string(const std::string& s) {
  if (s == "press-drc") return PedalKind::kPressDrc;
  if (s == "press-absolute") return PedalKind::kPressAbsolute;
  if (s == "release") return PedalKind::kRelease;
  throw Error(ErrorCode::kFormat, "unknown pedal kind '" + s + "'");
}

namespace {

void check_rate(double r) {
  if (!(r > 0.0 && r <= 1.0))
    throw Error(ErrorCode::kInvalidArgument,
                "decay_rate must lie in (0,1], got " + std::to_string(r));
}

Pose7 offset_pose(const Pose7& base, const Vec6& offset,
                  const std::optional<double>& gripper) {
  Pose7 out;
  for (int i = 0; i < 3; ++i) out.position[i] = base.position[i] + offset[i];
  out.orientation = clamp_rotation({base.orientation[0] + offset[3],
                                    base.orientation[1] + offset[4],
                                    base.orientation[2] + offset[5]});
  out.gripper = gripper.value_or(base.gripper);
  return out;
}

CorrectionState to_autonomous(CorrectionState s) {
  s.mode = ControlMode::kAutonomous;
  s.offset_vector = {};
  s.gripper_override.reset();
  return s;
}

}  // namespace

CorrectionState make_correction_state(double decay_rate) {
  check_rate(decay_rate);
  CorrectionState s;
  s.decay_rate = decay_rate;
  return s;
}

double decay_factor(double decay_rate, std::int64_t elapsed) {
  if (elapsed == 0) return 1.0;
  return std::pow(1.0 - decay_rate, static_cast<double>(elapsed));
}

Vec6 live_offset(const CorrectionState& state, std::int64_t tick,
                 double zero_snap) {
  if (state.mode != ControlMode::kDrcCorrecting) return {};
  const Vec6 scaled = scale(state.offset_vector,
                            decay_factor(state.decay_rate,
                                         tick - state.last_input_tick));
  if (norm(scaled) < zero_snap) return {};
  return scaled;
}

CorrectionResult apply_correction(const CorrectionState& state,
                                  std::int64_t tick, const Pose7& policy_action,
                                  const std::optional<Vec6>& expert_input,
                                  std::optional<double> gripper_override,
                                  double zero_snap) {
  check_rate(state.decay_rate);
  if (tick < state.last_input_tick)
    throw Error(ErrorCode::kInvalidArgument,
                "tick precedes the last correction input");

  if (expert_input) {
    if (!all_finite(*expert_input) ||
        (gripper_override && !std::isfinite(*gripper_override)))
      throw Error(ErrorCode::kNonFinite, "non-finite expert input");
    CorrectionState next = state;
    next.mode = ControlMode::kDrcCorrecting;
    next.offset_vector = *expert_input;
    next.last_input_tick = tick;
    next.gripper_override = gripper_override;
    if (norm(*expert_input) < zero_snap && !gripper_override) {
      return {policy_action, to_autonomous(next)};
    }
    return {offset_pose(policy_action, *expert_input, next.gripper_override),
            next};
  }

  if (state.mode != ControlMode::kDrcCorrecting)
    return {policy_action, state};

  const double factor =
      decay_factor(state.decay_rate, tick - state.last_input_tick);
  const Vec6 scaled = scale(state.offset_vector, factor);
  if (norm(scaled) < zero_snap) {
    return {policy_action, to_autonomous(state)};
  }
  return {offset_pose(policy_action, scaled, state.gripper_override), state};
}

Pose7 apply_absolute(const Pose7& policy_action, const Pose7& expert_action,
                     bool expert_active) {
  if (!expert_action.finite())
    throw Error(ErrorCode::kNonFinite, "non-finite absolute expert action");
  return expert_active ? expert_action : policy_action;
}

CorrectionState handle_pedal(const CorrectionState& state,
                             const PedalEvent& event, double zero_snap) {
  CorrectionState next = state;
  switch (event.kind) {
    case PedalKind::kPressDrc:
      next.mode = ControlMode::kDrcCorrecting;
      if (state.mode != ControlMode::kDrcCorrecting) {
        next.offset_vector = {};
        next.last_input_tick = event.tick;
        next.gripper_override.reset();
      }
      return next;
    case PedalKind::kPressAbsolute:
      next = to_autonomous(state);
      next.mode = ControlMode::kAbsoluteOverride;
      return next;
    case PedalKind::kRelease:
      if (state.mode == ControlMode::kDrcCorrecting &&
          event.tick >= state.last_input_tick) {
        const double live =
            norm(state.offset_vector) *
            decay_factor(state.decay_rate, event.tick - state.last_input_tick);
        if (live > zero_snap) return next;
      }
      return to_autonomous(state);
  }
  return next;
}

}  // namespace drc
