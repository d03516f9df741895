#include "drclab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace drc::policy {

namespace {

// Spread floors for near-constant channels (orientation never varies in the
// demonstrations); without them, tiny noise turns into unit-scale signal.
// Features that never varied at all keep unit scale so an unseen value
// (a new object's appearance) stays a modest input.
constexpr double kFeatureStdFloor = 0.01;
constexpr double kTargetStdFloor = 1e-3;
constexpr double kConstantSpread = 1e-9;
// Saturating copy of the target offset that resolves the last few
// millimetres of an approach.
constexpr double kFineScale = 0.02;
}  // namespace

std::vector<double> features(const Observation& obs) {
  const Pose7& g = obs.gripper_pose;
  const Vec3& t = obs.target_sighting;
  const Vec3 d = sub(t, g.position);
  return {g.position[0],    g.position[1],    g.position[2],
          g.orientation[0], g.orientation[1], g.orientation[2],
          g.gripper,        t[0],             t[1],
          t[2],             d[0],             d[1],
          d[2],             std::tanh(d[0] / kFineScale),
          std::tanh(d[1] / kFineScale), std::tanh(d[2] / kFineScale),
          obs.contact_flag ? 1.0 : 0.0, obs.task_phase_hint, obs.appearance};
}

namespace {

void check_observation(const Observation& obs) {
  if (!obs.gripper_pose.finite() || !all_finite(obs.target_sighting) ||
      !std::isfinite(obs.task_phase_hint) || !std::isfinite(obs.appearance))
    throw Error(ErrorCode::kNonFinite, "non-finite observation");
}

int layer_count(const PolicyParams& p) {
  return static_cast<int>(p.widths.size()) - 1;
}

// Offsets of each layer's weight block inside the flat array.
std::vector<std::size_t> layer_offsets(const std::vector<int>& widths) {
  std::vector<std::size_t> off{0};
  for (std::size_t l = 1; l < widths.size(); ++l)
    off.push_back(off.back() +
                  static_cast<std::size_t>(widths[l]) * (widths[l - 1] + 1));
  return off;
}

// Activations for one sample. acts[0] is the normalized input, acts[L] the
// normalized output.
struct Workspace {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> deltas;

  explicit Workspace(const std::vector<int>& widths) {
    for (int w : widths) {
      acts.emplace_back(static_cast<std::size_t>(w));
      deltas.emplace_back(static_cast<std::size_t>(w));
    }
  }
};

void forward(const PolicyParams& p, const std::vector<std::size_t>& off,
             const std::vector<double>& x, Workspace& ws) {
  const int L = layer_count(p);
  auto& in = ws.acts[0];
  for (std::size_t i = 0; i < in.size(); ++i)
    in[i] = (x[i] - p.observation_norm.mean[i]) / p.observation_norm.stddev[i];
  for (int l = 1; l <= L; ++l) {
    const int n_in = p.widths[l - 1];
    const int n_out = p.widths[l];
    const double* W = p.weights.data() + off[l - 1];
    const double* b = W + static_cast<std::size_t>(n_out) * n_in;
    const auto& a = ws.acts[l - 1];
    auto& z = ws.acts[l];
    for (int o = 0; o < n_out; ++o) {
      const double* row = W + static_cast<std::size_t>(o) * n_in;
      double s = b[o];
      for (int i = 0; i < n_in; ++i) s += row[i] * a[i];
      z[o] = l == L ? s : std::tanh(s);
    }
  }
}

// Accumulates d(loss)/d(weights) given d(loss)/d(normalized output) stored
// in ws.deltas[L].
void backward(const PolicyParams& p, const std::vector<std::size_t>& off,
              Workspace& ws, std::vector<double>& grad) {
  const int L = layer_count(p);
  for (int l = L; l >= 1; --l) {
    const int n_in = p.widths[l - 1];
    const int n_out = p.widths[l];
    const double* W = p.weights.data() + off[l - 1];
    double* gW = grad.data() + off[l - 1];
    double* gb = gW + static_cast<std::size_t>(n_out) * n_in;
    const auto& a = ws.acts[l - 1];
    const auto& d = ws.deltas[l];
    for (int o = 0; o < n_out; ++o) {
      double* grow = gW + static_cast<std::size_t>(o) * n_in;
      const double dv = d[o];
      for (int i = 0; i < n_in; ++i) grow[i] += dv * a[i];
      gb[o] += dv;
    }
    if (l > 1) {
      auto& dprev = ws.deltas[l - 1];
      std::fill(dprev.begin(), dprev.end(), 0.0);
      for (int o = 0; o < n_out; ++o) {
        const double* row = W + static_cast<std::size_t>(o) * n_in;
        const double dv = d[o];
        for (int i = 0; i < n_in; ++i) dprev[i] += row[i] * dv;
      }
      for (int i = 0; i < n_in; ++i) dprev[i] *= 1.0 - a[i] * a[i];
    }
  }
}

void check_batch(const PolicyParams& p, std::span<const Sample> batch) {
  if (batch.empty())
    throw Error(ErrorCode::kInvalidArgument, "empty batch");
  for (const Sample& s : batch)
    if (static_cast<int>(s.actions.size()) != p.horizon)
      throw Error(ErrorCode::kInvalidArgument,
                  "target sequence length differs from the horizon");
}

Normalization identity_norm(int n) {
  return {std::vector<double>(static_cast<std::size_t>(n), 0.0),
          std::vector<double>(static_cast<std::size_t>(n), 1.0)};
}

}  // namespace

PolicyParams init_params(const std::vector<int>& hidden_widths,
                         std::uint64_t seed, int horizon, int execute_steps) {
  if (!(horizon >= execute_steps && execute_steps >= 1))
    throw Error(ErrorCode::kInvalidArgument,
                "need horizon >= execute_steps >= 1");
  PolicyParams p;
  p.horizon = horizon;
  p.execute_steps = execute_steps;
  p.widths.push_back(kFeatureCount);
  for (int w : hidden_widths) {
    if (w <= 0) throw Error(ErrorCode::kInvalidArgument, "bad layer width");
    p.widths.push_back(w);
  }
  p.widths.push_back(horizon * kActionChannels);
  p.weights.assign(weight_count(p.widths), 0.0);
  p.observation_norm = identity_norm(p.widths.front());
  p.action_norm = identity_norm(p.widths.back());

  Rng rng(derive_seed(seed, 0x1a17));
  const auto off = layer_offsets(p.widths);
  for (std::size_t l = 1; l < p.widths.size(); ++l) {
    const int n_in = p.widths[l - 1];
    const int n_out = p.widths[l];
    const double limit = std::sqrt(6.0 / (n_in + n_out));
    for (std::size_t k = 0; k < static_cast<std::size_t>(n_in) * n_out; ++k)
      p.weights[off[l - 1] + k] = rng.uniform(-limit, limit);
  }
  return p;
}

std::vector<double> forward_raw(const PolicyParams& params,
                                const Observation& obs) {
  check_observation(obs);
  const auto off = layer_offsets(params.widths);
  Workspace ws(params.widths);
  forward(params, off, features(obs), ws);
  std::vector<double> out = ws.acts.back();
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = params.action_norm.mean[k] + params.action_norm.stddev[k] * out[k];
  return out;
}

std::vector<Pose7> predict(const PolicyParams& params, const Observation& obs) {
  const std::vector<double> raw = forward_raw(params, obs);
  const Pose7& g = obs.gripper_pose;
  std::vector<Pose7> seq(static_cast<std::size_t>(params.horizon));
  for (int h = 0; h < params.horizon; ++h) {
    const double* r = raw.data() + static_cast<std::size_t>(h) * kActionChannels;
    Pose7& a = seq[static_cast<std::size_t>(h)];
    for (int i = 0; i < 3; ++i) a.position[i] = g.position[i] + r[i];
    a.orientation = clamp_rotation({g.orientation[0] + r[3],
                                    g.orientation[1] + r[4],
                                    g.orientation[2] + r[5]});
    a.gripper = std::clamp(r[6], 0.0, 1.0);
  }
  return seq;
}

MlpPolicy::MlpPolicy(PolicyParams params) : params_(std::move(params)) {
  const ValidationReport r = validate(params_);
  if (!r.empty())
    throw Error(ErrorCode::kInvalidArgument, "invalid policy: " + r.front());
}

std::vector<Pose7> MlpPolicy::predict(const Observation& obs) const {
  return policy::predict(params_, obs);
}

Sample slice_window(const Trajectory& traj, std::size_t t, int horizon,
                    DatasetLabel provenance, std::size_t trajectory_index) {
  Sample s;
  s.observation = traj.steps.at(t).observation;
  s.provenance = provenance;
  s.trajectory_index = trajectory_index;
  s.actions.reserve(static_cast<std::size_t>(horizon));
  for (int h = 0; h < horizon; ++h) {
    const std::size_t k =
        std::min(t + static_cast<std::size_t>(h), traj.steps.size() - 1);
    s.actions.push_back(traj.steps[k].applied_action);
  }
  return s;
}

std::vector<double> encode_targets(const Sample& sample) {
  const Pose7& g = sample.observation.gripper_pose;
  std::vector<double> y;
  y.reserve(sample.actions.size() * kActionChannels);
  for (const Pose7& a : sample.actions) {
    for (int i = 0; i < 3; ++i) y.push_back(a.position[i] - g.position[i]);
    for (int i = 0; i < 3; ++i) y.push_back(a.orientation[i] - g.orientation[i]);
    y.push_back(a.gripper);
  }
  return y;
}

double loss(const PolicyParams& params, std::span<const Sample> batch) {
  check_batch(params, batch);
  const auto off = layer_offsets(params.widths);
  Workspace ws(params.widths);
  const std::size_t out_n = params.widths.back();
  double total = 0.0;
  for (const Sample& s : batch) {
    forward(params, off, features(s.observation), ws);
    const std::vector<double> y = encode_targets(s);
    for (std::size_t k = 0; k < out_n; ++k) {
      const double target =
          (y[k] - params.action_norm.mean[k]) / params.action_norm.stddev[k];
      const double e = ws.acts.back()[k] - target;
      total += e * e;
    }
  }
  return total / static_cast<double>(batch.size() * out_n);
}

double loss_and_gradient(const PolicyParams& params,
                         std::span<const Sample> batch,
                         std::vector<double>& gradient) {
  check_batch(params, batch);
  gradient.assign(params.weights.size(), 0.0);
  const auto off = layer_offsets(params.widths);
  Workspace ws(params.widths);
  const std::size_t out_n = params.widths.back();
  const double denom = static_cast<double>(batch.size() * out_n);
  double total = 0.0;
  for (const Sample& s : batch) {
    forward(params, off, features(s.observation), ws);
    const std::vector<double> y = encode_targets(s);
    auto& d = ws.deltas.back();
    for (std::size_t k = 0; k < out_n; ++k) {
      const double target =
          (y[k] - params.action_norm.mean[k]) / params.action_norm.stddev[k];
      const double e = ws.acts.back()[k] - target;
      total += e * e;
      d[k] = 2.0 * e / denom;
    }
    backward(params, off, ws, gradient);
  }
  return total / denom;
}

namespace {

// Every (trajectory, step) window of a pool, grouped by trajectory.
std::size_t window_count(const Dataset& d) {
  std::size_t n = 0;
  for (const Trajectory& t : d.trajectories) n += t.steps.size();
  return n;
}

Sample draw(const Dataset& d, Rng& rng, int horizon) {
  const std::size_t ti = rng.below(d.trajectories.size());
  const Trajectory& t = d.trajectories[ti];
  const std::size_t step = rng.below(t.steps.size());
  return slice_window(t, step, horizon, d.label, ti);
}

}  // namespace

Batch make_batch(const Dataset& dp, const Dataset& dh, int batch_size,
                 Rng& rng, int horizon) {
  if (dp.empty())
    throw Error(ErrorCode::kInvalidArgument, "pretraining dataset is empty");
  if (batch_size <= 0 || batch_size % 2 != 0)
    throw Error(ErrorCode::kInvalidArgument, "batch_size must be even");
  for (const Dataset* d : {&dp, &dh})
    for (const Trajectory& t : d->trajectories)
      if (t.steps.empty())
        throw Error(ErrorCode::kInvalidArgument, "empty trajectory in dataset");
  Batch batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  if (dh.empty()) {
    for (int i = 0; i < batch_size; ++i) batch.push_back(draw(dp, rng, horizon));
    return batch;
  }
  for (int i = 0; i < batch_size / 2; ++i) batch.push_back(draw(dp, rng, horizon));
  for (int i = 0; i < batch_size / 2; ++i) batch.push_back(draw(dh, rng, horizon));
  return batch;
}

std::pair<Normalization, Normalization> fit_normalization(const Dataset& dp,
                                                          const Dataset& dh,
                                                          int horizon) {
  const std::size_t nin = kFeatureCount;
  const std::size_t nout = static_cast<std::size_t>(horizon) * kActionChannels;
  std::vector<double> s_in(nin, 0.0), q_in(nin, 0.0);
  std::vector<double> s_out(nout, 0.0), q_out(nout, 0.0);
  double n = 0.0;
  for (const Dataset* d : {&dp, &dh}) {
    for (std::size_t ti = 0; ti < d->trajectories.size(); ++ti) {
      const Trajectory& t = d->trajectories[ti];
      for (std::size_t k = 0; k < t.steps.size(); ++k) {
        const Sample s = slice_window(t, k, horizon, d->label, ti);
        const std::vector<double> x = features(s.observation);
        const std::vector<double> y = encode_targets(s);
        for (std::size_t i = 0; i < nin; ++i) {
          s_in[i] += x[i];
          q_in[i] += x[i] * x[i];
        }
        for (std::size_t i = 0; i < nout; ++i) {
          s_out[i] += y[i];
          q_out[i] += y[i] * y[i];
        }
        n += 1.0;
      }
    }
  }
  if (n == 0.0)
    throw Error(ErrorCode::kInvalidArgument, "no samples to normalize");
  auto finish = [n](const std::vector<double>& s, const std::vector<double>& q,
                    double floor, bool unit_if_constant) {
    Normalization out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double m = s[i] / n;
      const double var = std::max(0.0, q[i] / n - m * m);
      const double sd = std::sqrt(var);
      out.mean.push_back(m);
      if (unit_if_constant && sd < kConstantSpread)
        out.stddev.push_back(1.0);
      else
        out.stddev.push_back(std::max(sd, floor));
    }
    return out;
  };
  return {finish(s_in, q_in, kFeatureStdFloor, true),
          finish(s_out, q_out, kTargetStdFloor, false)};
}

PolicyParams renormalize(const PolicyParams& params, const Normalization& obs,
                         const Normalization& act) {
  PolicyParams p = params;
  const auto off = layer_offsets(p.widths);
  const int L = layer_count(p);

  // First layer: W' = W diag(s'/s), b' = b + W (m' - m)/s.
  {
    const int n_in = p.widths[0];
    const int n_out = p.widths[1];
    double* W = p.weights.data() + off[0];
    double* b = W + static_cast<std::size_t>(n_out) * n_in;
    const Normalization& old = params.observation_norm;
    for (int o = 0; o < n_out; ++o) {
      double* row = W + static_cast<std::size_t>(o) * n_in;
      double shift = 0.0;
      for (int i = 0; i < n_in; ++i) {
        shift += row[i] * (obs.mean[i] - old.mean[i]) / old.stddev[i];
        row[i] *= obs.stddev[i] / old.stddev[i];
      }
      b[o] += shift;
    }
  }
  // Last layer: z' = (m - m' + s z) / s'.
  {
    const int n_in = p.widths[L - 1];
    const int n_out = p.widths[L];
    double* W = p.weights.data() + off[L - 1];
    double* b = W + static_cast<std::size_t>(n_out) * n_in;
    const Normalization& old = params.action_norm;
    for (int o = 0; o < n_out; ++o) {
      const double ratio = old.stddev[o] / act.stddev[o];
      double* row = W + static_cast<std::size_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) row[i] *= ratio;
      b[o] = (old.mean[o] - act.mean[o] + old.stddev[o] * b[o]) / act.stddev[o];
    }
  }
  p.observation_norm = obs;
  p.action_norm = act;
  return p;
}

ValidationReport validate(const TrainConfig& cfg) {
  ValidationReport r;
  if (cfg.epochs < 1) r.push_back("epochs >= 1");
  if (cfg.batch_size <= 0 || cfg.batch_size % 2 != 0)
    r.push_back("batch_size even");
  if (cfg.eval_batch_size <= 0 || cfg.eval_batch_size % 2 != 0)
    r.push_back("eval_batch_size even");
  if (!(cfg.learning_rate > 0.0)) r.push_back("learning_rate > 0");
  if (!(cfg.horizon >= cfg.execute_steps && cfg.execute_steps >= 1))
    r.push_back("horizon >= execute_steps >= 1");
  return r;
}

TrainResult train(const PolicyParams& params, const Dataset& dp,
                  const Dataset& dh, const TrainConfig& cfg) {
  const ValidationReport r = validate(cfg);
  if (!r.empty())
    throw Error(ErrorCode::kInvalidArgument, "invalid train config: " + r.front());
  if (dp.empty())
    throw Error(ErrorCode::kInvalidArgument, "pretraining dataset is empty");
  if (params.horizon != cfg.horizon)
    throw Error(ErrorCode::kInvalidArgument, "horizon mismatch");

  const auto [obs_norm, act_norm] = fit_normalization(dp, dh, cfg.horizon);
  TrainResult result;
  result.params = renormalize(params, obs_norm, act_norm);
  result.params.execute_steps = cfg.execute_steps;
  PolicyParams& p = result.params;

  Rng eval_rng(derive_seed(cfg.seed, 0xe7a1));
  const Batch eval_batch =
      make_batch(dp, dh, cfg.eval_batch_size, eval_rng, cfg.horizon);
  Rng rng(derive_seed(cfg.seed, 0x7a19));

  const std::size_t windows = window_count(dp) + window_count(dh);
  const std::size_t steps_per_epoch = std::max<std::size_t>(
      1, (windows + static_cast<std::size_t>(cfg.batch_size) - 1) /
             static_cast<std::size_t>(cfg.batch_size));

  std::vector<double> grad;
  std::vector<double> m1, m2;
  if (cfg.optimizer == Optimizer::kAdam) {
    m1.assign(p.weights.size(), 0.0);
    m2.assign(p.weights.size(), 0.0);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  const double total_steps =
      static_cast<double>(steps_per_epoch) * static_cast<double>(cfg.epochs);
  double step_index = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t it = 0; it < steps_per_epoch; ++it) {
      const double lr =
          cfg.cosine_decay
              ? 0.5 * cfg.learning_rate *
                    (1.0 + std::cos(kPi * step_index / total_steps))
              : cfg.learning_rate;
      step_index += 1.0;
      const Batch batch = make_batch(dp, dh, cfg.batch_size, rng, cfg.horizon);
      const double l = loss_and_gradient(p, batch, grad);
      if (!std::isfinite(l))
        throw Error(ErrorCode::kDiverged, "training loss became non-finite");
      if (cfg.optimizer == Optimizer::kSgd) {
        for (std::size_t k = 0; k < grad.size(); ++k)
          p.weights[k] -= lr * grad[k];
      } else {
        b1t *= kBeta1;
        b2t *= kBeta2;
        for (std::size_t k = 0; k < grad.size(); ++k) {
          m1[k] = kBeta1 * m1[k] + (1 - kBeta1) * grad[k];
          m2[k] = kBeta2 * m2[k] + (1 - kBeta2) * grad[k] * grad[k];
          const double mh = m1[k] / (1 - b1t);
          const double vh = m2[k] / (1 - b2t);
          p.weights[k] -= lr * mh / (std::sqrt(vh) + kEps);
        }
      }
    }
    const double eval = loss(p, eval_batch);
    if (!std::isfinite(eval))
      throw Error(ErrorCode::kDiverged, "evaluation loss became non-finite");
    result.epoch_losses.push_back(eval);
  }
  return result;
}

// ---------------------------------------------------------------------------

NearestTrajectoryPolicy::NearestTrajectoryPolicy(std::vector<Dataset> datasets,
                                                 int horizon, int execute_steps)
    : datasets_(std::move(datasets)),
      horizon_(horizon),
      execute_steps_(execute_steps) {
  if (!(horizon >= execute_steps && execute_steps >= 1))
    throw Error(ErrorCode::kInvalidArgument,
                "need horizon >= execute_steps >= 1");
  for (std::size_t d = 0; d < datasets_.size(); ++d)
    for (std::size_t t = 0; t < datasets_[d].trajectories.size(); ++t) {
      const Trajectory& traj = datasets_[d].trajectories[t];
      for (std::size_t k = 0; k < traj.steps.size(); ++k)
        entries_.push_back({features(traj.steps[k].observation), d, t, k});
    }
  if (entries_.empty())
    throw Error(ErrorCode::kInvalidArgument, "retrieval policy needs data");
}

std::vector<Pose7> NearestTrajectoryPolicy::predict(
    const Observation& obs) const {
  check_observation(obs);
  const std::vector<double> key = features(obs);
  double best = std::numeric_limits<double>::infinity();
  const Entry* hit = nullptr;
  for (const Entry& e : entries_) {
    double d = 0.0;
    for (std::size_t i = 0; i < key.size() && d < best; ++i) {
      const double diff = key[i] - e.key[i];
      d += diff * diff;
    }
    if (d < best) {
      best = d;
      hit = &e;
    }
  }
  const Trajectory& traj = datasets_[hit->dataset].trajectories[hit->trajectory];
  return slice_window(traj, hit->step, horizon_, DatasetLabel::kPretraining, 0)
      .actions;
}

}  // namespace drc::policy
