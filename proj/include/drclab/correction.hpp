#pragma once

// Decaying relative correction and the pedal-driven mode machine.
//
// A relative correction is a 6-vector offset supplied by the expert. It is
// added to the policy's pose on the tick it arrives and then fades
// geometrically: at tick t the applied offset is
//
//   v * (1 - r)^(t - t_input)
//
// where t_input is the tick of the most recent input. The exponent is
// recomputed from t_input on every call, never accumulated. A fresh input
// replaces whatever residual was live. Ticks are policy ticks.

#include <cstdint>
#include <optional>

#include "drclab/domain.hpp"

namespace drc {

// Offsets whose decayed magnitude falls below this are treated as zero and
// control returns to the policy.
inline constexpr double kZeroSnapThreshold = 1e-3;
inline constexpr double kDefaultDecayRate = 0.1;

enum class PedalKind { kPressDrc, kPressAbsolute, kRelease };

const char* to_string(PedalKind kind);
PedalKind pedal_kind_from_string(const std::string& s);

struct PedalEvent {
  PedalKind kind = PedalKind::kRelease;
  std::int64_t tick = 0;
};

struct CorrectionResult {
  Pose7 applied_action;
  CorrectionState state;
};

CorrectionState make_correction_state(double decay_rate = kDefaultDecayRate);

// Decay factor (1 - r)^elapsed.
double decay_factor(double decay_rate, std::int64_t elapsed);

// Offset actually in force at `tick` (zero once snapped).
Vec6 live_offset(const CorrectionState& state, std::int64_t tick,
                 double zero_snap = kZeroSnapThreshold);

CorrectionResult apply_correction(
    const CorrectionState& state, std::int64_t tick, const Pose7& policy_action,
    const std::optional<Vec6>& expert_input,
    std::optional<double> gripper_override = std::nullopt,
    double zero_snap = kZeroSnapThreshold);

// Full override: no memory, so a tick after release is pure policy.
Pose7 apply_absolute(const Pose7& policy_action, const Pose7& expert_action,
                     bool expert_active);

CorrectionState handle_pedal(const CorrectionState& state,
                             const PedalEvent& event,
                             double zero_snap = kZeroSnapThreshold);

}  // namespace drc
