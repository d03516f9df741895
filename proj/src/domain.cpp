#include "drclab/domain.hpp"

#include <cmath>
#include <set>

namespace drc {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kDigestMismatch: return "digest_mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kBudgetExhausted: return "budget_exhausted";
    case ErrorCode::kOracleFailure: return "oracle_failure";
    case ErrorCode::kNetwork: return "network";
  }
  return "unknown";
}

Vec3 clamp_rotation(const Vec3& axis_angle) {
  const double n = norm(axis_angle);
  if (n <= kPi) return axis_angle;
  return scale(axis_angle, kPi / n);
}

const char* to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::kAutonomous: return "autonomous";
    case ControlMode::kDrcCorrecting: return "drc";
    case ControlMode::kAbsoluteOverride: return "absolute";
  }
  return "?";
}

ControlMode control_mode_from_string(const std::string& s) {
  if (s == "autonomous") return ControlMode::kAutonomous;
  if (s == "drc") return ControlMode::kDrcCorrecting;
  if (s == "absolute") return ControlMode::kAbsoluteOverride;
  throw Error(ErrorCode::kFormat, "unknown control mode '" + s + "'");
}

const char* to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::kHookedPick: return "hooked-pick";
    case TaskFamily::kStainWipe: return "stain-wipe";
  }
  return "?";
}

TaskFamily task_family_from_string(const std::string& s) {
  if (s == "hooked-pick") return TaskFamily::kHookedPick;
  if (s == "stain-wipe") return TaskFamily::kStainWipe;
  throw Error(ErrorCode::kInvalidArgument, "unknown task family '" + s + "'");
}

const char* to_string(TaskPhase phase) {
  switch (phase) {
    case TaskPhase::kNone: return "none";
    case TaskPhase::kGrasped: return "grasped";
    case TaskPhase::kDisengaged: return "disengaged";
    case TaskPhase::kDelivered: return "delivered";
    case TaskPhase::kContact: return "contact";
    case TaskPhase::kHalfWiped: return "half-wiped";
    case TaskPhase::kWiped: return "wiped";
  }
  return "?";
}

TaskPhase task_phase_from_string(const std::string& s) {
  for (TaskPhase p : {TaskPhase::kNone, TaskPhase::kGrasped,
                      TaskPhase::kDisengaged, TaskPhase::kDelivered,
                      TaskPhase::kContact, TaskPhase::kHalfWiped,
                      TaskPhase::kWiped}) {
    if (s == to_string(p)) return p;
  }
  throw Error(ErrorCode::kFormat, "unknown task phase '" + s + "'");
}

const char* to_string(DatasetLabel label) {
  return label == DatasetLabel::kPretraining ? "pretraining"
                                             : "human-corrected";
}

DatasetLabel dataset_label_from_string(const std::string& s) {
  if (s == "pretraining") return DatasetLabel::kPretraining;
  if (s == "human-corrected") return DatasetLabel::kHumanCorrected;
  throw Error(ErrorCode::kFormat, "unknown dataset label '" + s + "'");
}

Box Box::scaled(double factor) const {
  Box b;
  const Vec3 c = center();
  for (int i = 0; i < 3; ++i) {
    const double half = (hi[i] - lo[i]) / 2 * factor;
    b.lo[i] = c[i] - half;
    b.hi[i] = c[i] + half;
  }
  return b;
}

TaskSpec default_task(TaskFamily family) {
  TaskSpec t;
  t.family = family;
  t.actuation_bias = {0.02, 0.01, 0.0};
  if (family == TaskFamily::kHookedPick) {
    t.target_region = Box{{0.35, 0.55, 0.45}, {0.65, 0.75, 0.65}};
    t.object_variant = "raspberry";
  } else {
    // Stain centres lie on the wall plane y = 0.85.
    t.target_region = Box{{0.30, 0.85, 0.35}, {0.70, 0.85, 0.65}};
    t.object_variant = "stain";
  }
  return t;
}

std::size_t weight_count(const std::vector<int>& widths) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < widths.size(); ++l)
    n += static_cast<std::size_t>(widths[l]) * (widths[l - 1] + 1);
  return n;
}

// ---------------------------------------------------------------------------

ValidationReport validate(const Pose7& pose) {
  ValidationReport r;
  if (!all_finite(pose.position)) r.push_back("pose position finite");
  if (!all_finite(pose.orientation) || norm(pose.orientation) > kPi + 1e-12)
    r.push_back("orientation magnitude <= pi");
  if (!(pose.gripper >= 0.0 && pose.gripper <= 1.0))
    r.push_back("gripper in [0,1]");
  return r;
}

ValidationReport validate(const Observation& obs) {
  ValidationReport r = validate(obs.gripper_pose);
  for (double x : obs.target_sighting) {
    if (!(x >= -0.5 && x <= 1.5)) {
      r.push_back("target_sighting within [-0.5,1.5]^3");
      break;
    }
  }
  if (!(obs.task_phase_hint >= 0.0 && obs.task_phase_hint <= 1.0))
    r.push_back("task_phase_hint in [0,1]");
  return r;
}

ValidationReport validate(const CorrectionState& state) {
  ValidationReport r;
  if (!(state.decay_rate > 0.0 && state.decay_rate <= 1.0))
    r.push_back("decay_rate in (0,1]");
  if (!all_finite(state.offset_vector)) r.push_back("offset_vector finite");
  if (state.mode == ControlMode::kAutonomous && norm(state.offset_vector) != 0.0)
    r.push_back("offset_vector zero when autonomous");
  return r;
}

ValidationReport validate(const StepRecord& record) {
  ValidationReport r = validate(record.observation);
  if (!record.policy_action.finite()) r.push_back("policy_action finite");
  if (!record.applied_action.finite()) r.push_back("applied_action finite");
  const bool expected = record.correction_event.has_value() ||
                        (record.mode == ControlMode::kAbsoluteOverride &&
                         record.intervention_flag);
  if (record.intervention_flag != expected)
    r.push_back("intervention_flag iff correction_event or live override");
  return r;
}

ValidationReport validate(const TaskSpec& task) {
  ValidationReport r;
  for (int i = 0; i < 3; ++i) {
    if (!(task.target_region.lo[i] >= 0.0 && task.target_region.hi[i] <= 1.0 &&
          task.target_region.lo[i] <= task.target_region.hi[i])) {
      r.push_back("target_region inside unit cube");
      break;
    }
  }
  if (!(task.grasp_tolerance > 0.0)) r.push_back("grasp_tolerance > 0");
  if (!(task.stain_radius_range.first <= task.stain_radius_range.second))
    r.push_back("stain_radius_range min <= max");
  if (!all_finite(task.actuation_bias)) r.push_back("actuation_bias finite");
  if (!(task.sensing_noise_std >= 0.0)) r.push_back("sensing_noise_std >= 0");
  return r;
}

ValidationReport validate(const EpisodeOutcome& outcome) {
  ValidationReport r;
  if (outcome.score != 0.0 && outcome.score != 0.5 && outcome.score != 1.0)
    r.push_back("score in {0,0.5,1}");
  if (!(outcome.intervention_rate >= 0.0 && outcome.intervention_rate <= 1.0))
    r.push_back("intervention_rate in [0,1]");
  if (outcome.ticks_used < 0) r.push_back("ticks_used >= 0");
  return r;
}

ValidationReport validate(const Trajectory& traj) {
  ValidationReport r = validate(traj.task);
  if (traj.steps.empty()) r.push_back("trajectory non-empty");
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const auto expected_tick = static_cast<std::int64_t>(i);
    if (traj.steps[i].tick != expected_tick) {
      r.push_back("ticks strictly increasing from 0");
      break;
    }
  }
  std::set<std::string> seen;
  for (const StepRecord& s : traj.steps) {
    for (std::string& v : validate(s))
      if (seen.insert(v).second) r.push_back(std::move(v));
  }
  for (std::string& v : validate(traj.outcome)) r.push_back(std::move(v));
  return r;
}

ValidationReport validate(const Dataset& dataset) {
  ValidationReport r;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const Trajectory& t = dataset.trajectories[i];
    if (t.task.family != dataset.trajectories.front().task.family) {
      r.push_back("all trajectories share the task family");
      break;
    }
  }
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    for (const std::string& v : validate(dataset.trajectories[i]))
      r.push_back("trajectory " + std::to_string(i) + ": " + v);
  }
  return r;
}

ValidationReport validate(const PolicyParams& params) {
  ValidationReport r;
  if (!(params.horizon >= params.execute_steps && params.execute_steps >= 1))
    r.push_back("horizon >= execute_steps >= 1");
  if (params.widths.size() < 2) {
    r.push_back("architecture has input and output layers");
    return r;
  }
  for (int w : params.widths) {
    if (w <= 0) {
      r.push_back("layer widths positive");
      break;
    }
  }
  if (params.weights.size() != weight_count(params.widths))
    r.push_back("weight array length matches architecture");
  if (params.widths.back() != params.horizon * 7)
    r.push_back("output width equals horizon x 7");
  for (double w : params.weights) {
    if (!std::isfinite(w)) {
      r.push_back("weights finite");
      break;
    }
  }
  const auto in = static_cast<std::size_t>(params.widths.front());
  const auto out = static_cast<std::size_t>(params.widths.back());
  if (params.observation_norm.mean.size() != in ||
      params.observation_norm.stddev.size() != in)
    r.push_back("observation normalization matches input width");
  if (params.action_norm.mean.size() != out ||
      params.action_norm.stddev.size() != out)
    r.push_back("action normalization matches output width");
  return r;
}

}  // namespace drc
