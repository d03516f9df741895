#include "drclab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace drc::sim {

VariantProfile variant_profile(const std::string& variant) {
  if (variant == "raspberry") return {{0.0, 0.0, 0.0}, 1.0, 0.0};
  if (variant == "orange_tomato") return {{0.008, 0.0, -0.008}, 1.2, 0.35};
  if (variant == "green_tomato") return {{0.02, 0.0, -0.045}, 1.5, 1.0};
  if (variant == "stain") return {{0.0, 0.0, 0.0}, 1.0, 0.0};
  throw Error(ErrorCode::kInvalidArgument,
              "unknown object variant '" + variant + "'");
}

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

Vec3 move_capped(const Vec3& from, const Vec3& to, double cap) {
  const Vec3 d = sub(to, from);
  const double n = norm(d);
  if (n <= cap) return to;
  return add(from, scale(d, cap / n));
}

// Antiderivative of sqrt(r^2 - u^2).
// atan2 instead of asin(u/r): asin loses half its digits near |u| = r.
double half_chord_integral(double u, double r) {
  u = std::clamp(u, -r, r);
  const double h = std::sqrt(std::max(0.0, (r - u) * (r + u)));
  return 0.5 * (u * h + r * r * std::atan2(u, h));
}

void raise_phase(SimState& s, TaskPhase p) {
  if (static_cast<int>(p) > static_cast<int>(s.phase)) s.phase = p;
}

}  // namespace

double covered_disc_area(const std::vector<WipeBand>& bands, double cx,
                         double cz, double radius) {
  if (bands.empty() || radius <= 0.0) return 0.0;
  const double left = cx - radius;
  const double right = cx + radius;

  std::vector<double> xs{left, right};
  for (const WipeBand& b : bands) {
    if (b.x0 > left && b.x0 < right) xs.push_back(b.x0);
    if (b.x1 > left && b.x1 < right) xs.push_back(b.x1);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  double area = 0.0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const double xa = xs[k];
    const double xb = xs[k + 1];
    if (xb <= xa) continue;
    const double xm = 0.5 * (xa + xb);

    // Merge the z-intervals of every band spanning this slab.
    std::vector<std::pair<double, double>> iv;
    for (const WipeBand& b : bands)
      if (b.x0 <= xm && b.x1 >= xm && b.z1 > b.z0) iv.emplace_back(b.z0, b.z1);
    if (iv.empty()) continue;
    std::sort(iv.begin(), iv.end());
    std::vector<std::pair<double, double>> merged;
    for (const auto& p : iv) {
      if (!merged.empty() && p.first <= merged.back().second)
        merged.back().second = std::max(merged.back().second, p.second);
      else
        merged.push_back(p);
    }

    // Split further where the disc boundary crosses an interval edge.
    std::vector<double> sub{xa, xb};
    for (const auto& [a, b] : merged) {
      for (double e : {a, b}) {
        const double d = std::abs(e - cz);
        if (d >= radius) continue;
        const double w = std::sqrt(radius * radius - d * d);
        for (double xc : {cx - w, cx + w})
          if (xc > xa && xc < xb) sub.push_back(xc);
      }
    }
    std::sort(sub.begin(), sub.end());

    for (std::size_t j = 0; j + 1 < sub.size(); ++j) {
      const double ua = sub[j] - cx;
      const double ub = sub[j + 1] - cx;
      if (ub <= ua) continue;
      const double um = 0.5 * (ua + ub);
      const double hm = std::sqrt(std::max(0.0, radius * radius - um * um));
      const double chord = half_chord_integral(ub, radius) -
                           half_chord_integral(ua, radius);
      const double width = ub - ua;
      for (const auto& [a, b] : merged) {
        // Decide at the midpoint which bound is active on each side; the
        // choice is constant inside the sub-slab.
        const bool top_is_disc = cz + hm < b;
        const bool bottom_is_disc = cz - hm > a;
        const double top_m = top_is_disc ? cz + hm : b;
        const double bot_m = bottom_is_disc ? cz - hm : a;
        if (top_m <= bot_m) continue;
        double len = 0.0;
        len += top_is_disc ? cz * width + chord : b * width;
        len -= bottom_is_disc ? cz * width - chord : a * width;
        area += len;
      }
    }
  }
  return area;
}

SimState reset(const TaskSpec& task, std::uint64_t seed) {
  const ValidationReport report = validate(task);
  if (!report.empty())
    throw Error(ErrorCode::kInvalidArgument, "invalid task: " + report.front());
  (void)variant_profile(task.object_variant);

  Rng rng(derive_seed(seed, 0x5157));
  SimState s;
  s.task = task;
  s.noise_key = derive_seed(seed, 0x4e015e);
  Vec3 p{};
  for (int i = 0; i < 3; ++i)
    p[i] = rng.uniform(task.target_region.lo[i], task.target_region.hi[i]);
  if (task.family == TaskFamily::kHookedPick) {
    s.object_position = p;
    s.hang_point = p;
  } else {
    s.stain_center = {p[0], kWallY, p[2]};
    s.stain_radius = rng.uniform(task.stain_radius_range.first,
                                 task.stain_radius_range.second);
  }
  return s;
}

SimState step(const SimState& state, const Pose7& action) {
  SimState s = state;
  s.tick += 1;
  if (state.terminated) return s;

  // Kinematics.
  Vec3 target{};
  for (int i = 0; i < 3; ++i)
    target[i] = clamp01(action.position[i] + s.task.actuation_bias[i]);
  if (s.task.family == TaskFamily::kStainWipe)
    target[1] = std::min(target[1], kWallY);
  const Vec3 prev = s.gripper_pose.position;
  s.gripper_pose.position = move_capped(prev, target, kPositionCap);
  s.gripper_pose.orientation =
      move_capped(s.gripper_pose.orientation, clamp_rotation(action.orientation),
                  kOrientationCap);
  const double prev_grip = s.gripper_pose.gripper;
  s.gripper_pose.gripper = clamp01(action.gripper);
  const bool close_event = prev_grip < 0.5 && s.gripper_pose.gripper >= 0.5;
  const bool open_event = prev_grip >= 0.5 && s.gripper_pose.gripper < 0.5;
  const Vec3& pos = s.gripper_pose.position;

  if (s.task.family == TaskFamily::kHookedPick) {
    if (s.object_attached) {
      s.object_position = pos;
      if (s.hook_engaged && pos[2] >= s.hang_point[2] + kLiftDelta) {
        s.hook_engaged = false;
        raise_phase(s, TaskPhase::kDisengaged);
      }
    }
    if (close_event && !s.object_attached && !s.delivered &&
        norm(sub(pos, s.object_position)) <= s.task.grasp_tolerance) {
      s.object_attached = true;
      s.object_position = pos;
      raise_phase(s, TaskPhase::kGrasped);
    } else if (open_event && s.object_attached) {
      s.object_attached = false;
      if (s.hook_engaged) {
        s.object_position = s.hang_point;
      } else if (kBin.contains(pos)) {
        s.delivered = true;
        s.terminated = true;
        raise_phase(s, TaskPhase::kDelivered);
      } else {
        s.dropped = true;
        s.terminated = true;
      }
    }
  } else {
    const bool was_contact = s.in_contact;
    s.in_contact = pos[1] >= kWallY - kContactTolerance;
    if (s.in_contact) raise_phase(s, TaskPhase::kContact);
    if (was_contact && s.in_contact) {
      const double xm = 0.5 * (prev[0] + pos[0]);
      s.wiped_bands.push_back({xm - kClothWidth / 2, xm + kClothWidth / 2,
                               std::min(prev[2], pos[2]) - kClothHeight / 2,
                               std::max(prev[2], pos[2]) + kClothHeight / 2});
      const double disc = kPi * s.stain_radius * s.stain_radius;
      const double frac =
          std::min(1.0, covered_disc_area(s.wiped_bands, s.stain_center[0],
                                          s.stain_center[2], s.stain_radius) /
                            disc);
      s.wiped_fraction = std::max(s.wiped_fraction, frac);
      if (s.wiped_fraction > 0.5) raise_phase(s, TaskPhase::kHalfWiped);
      if (s.wiped_fraction >= 1.0 - kWipeCompleteEps) {
        raise_phase(s, TaskPhase::kWiped);
        s.terminated = true;
      }
    }
  }

  if (s.tick >= kEpisodeBudget) s.terminated = true;
  return s;
}

Vec3 true_target(const SimState& state) {
  return state.task.family == TaskFamily::kHookedPick ? state.object_position
                                                      : state.stain_center;
}

Observation observe(const SimState& state) {
  const VariantProfile vp = variant_profile(state.task.object_variant);
  Observation o;
  o.gripper_pose = state.gripper_pose;
  const Vec3 t = true_target(state);
  const double sd = state.task.sensing_noise_std * vp.noise_scale;
  for (int i = 0; i < 3; ++i) {
    const double n = hashed_normal(state.noise_key,
                                   static_cast<std::uint64_t>(state.tick),
                                   static_cast<std::uint64_t>(i));
    o.target_sighting[i] =
        std::clamp(t[i] + vp.sighting_offset[i] + sd * n, -0.5, 1.5);
  }
  o.appearance = vp.appearance;
  if (state.task.family == TaskFamily::kHookedPick) {
    o.contact_flag = state.object_attached;
    if (state.delivered || (state.object_attached && !state.hook_engaged))
      o.task_phase_hint = 1.0;
    else if (state.object_attached)
      o.task_phase_hint = 0.5;
  } else {
    o.contact_flag = state.in_contact;
    o.task_phase_hint = state.wiped_fraction;
  }
  return o;
}

double intervention_rate(const std::vector<StepRecord>& steps) {
  if (steps.empty())
    throw Error(ErrorCode::kInvalidArgument,
                "intervention rate of an empty trajectory");
  std::size_t flagged = 0;
  for (const StepRecord& s : steps) flagged += s.intervention_flag ? 1 : 0;
  return static_cast<double>(flagged) / static_cast<double>(steps.size());
}

EpisodeOutcome score_state(const SimState& final_state,
                           const std::vector<StepRecord>& steps) {
  EpisodeOutcome o;
  o.phase_reached = final_state.phase;
  o.ticks_used = static_cast<std::int64_t>(steps.size());
  o.intervention_rate = intervention_rate(steps);
  if (final_state.task.family == TaskFamily::kHookedPick) {
    if (final_state.delivered)
      o.score = 1.0;
    else if (final_state.phase == TaskPhase::kDisengaged)
      o.score = 0.5;
  } else {
    if (final_state.wiped_fraction >= 1.0 - kWipeCompleteEps)
      o.score = 1.0;
    else if (final_state.wiped_fraction > 0.5)
      o.score = 0.5;
  }
  return o;
}

EpisodeOutcome score(const Trajectory& traj) {
  if (traj.steps.empty())
    throw Error(ErrorCode::kInvalidArgument, "cannot score an empty trajectory");
  SimState s = reset(traj.task, traj.seed);
  for (const StepRecord& r : traj.steps) s = step(s, r.applied_action);
  return score_state(s, traj.steps);
}

}  // namespace drc::sim
