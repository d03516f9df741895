#include "drclab/loop.hpp"

#include <algorithm>
#include <tuple>
#include <cmath>

namespace drc::loop {

ExpertInput ExpertInput::from(const oracle::Decision& d) {
  ExpertInput in;
  if (const auto* v = std::get_if<oracle::DrcVector>(&d)) {
    in.kind = Kind::kDrc;
    in.vector = v->vector;
    in.gripper = v->gripper;
  } else if (const auto* a = std::get_if<oracle::AbsoluteAction>(&d)) {
    in.kind = Kind::kAbsolute;
    in.pose = a->pose;
  }
  return in;
}

// ---------------------------------------------------------------------------
// EpisodeRunner

EpisodeRunner::EpisodeRunner(std::shared_ptr<const policy::Policy> policy,
                             TaskSpec task, std::uint64_t seed,
                             double decay_rate)
    : policy_(std::move(policy)),
      task_(std::move(task)),
      seed_(seed),
      state_(sim::reset(task_, seed)),
      correction_(make_correction_state(decay_rate)) {
  if (!policy_) throw Error(ErrorCode::kInvalidArgument, "null policy");
}

const Pose7& EpisodeRunner::policy_action() {
  if (done()) throw Error(ErrorCode::kInvalidArgument, "episode already ended");
  if (!pending_action_) {
    pending_obs_ = sim::observe(state_);
    const auto steps = static_cast<std::size_t>(policy_->execute_steps());
    if (chunk_.empty() || chunk_index_ >= steps || chunk_index_ >= chunk_.size()) {
      chunk_ = policy_->predict(pending_obs_);
      chunk_index_ = 0;
      if (chunk_.empty())
        throw Error(ErrorCode::kInvalidArgument, "policy returned no actions");
    }
    pending_action_ = chunk_[chunk_index_];
  }
  return *pending_action_;
}

Pose7 EpisodeRunner::candidate() {
  const Pose7 pa = policy_action();
  if (correction_.mode == ControlMode::kAbsoluteOverride) return pa;
  return apply_correction(correction_, state_.tick, pa, std::nullopt)
      .applied_action;
}

void EpisodeRunner::pedal(PedalKind kind) {
  correction_ = handle_pedal(correction_, PedalEvent{kind, state_.tick});
}

void EpisodeRunner::advance(const ExpertInput& input) {
  const Pose7 pa = policy_action();
  StepRecord rec;
  rec.tick = state_.tick;
  rec.observation = pending_obs_;
  rec.policy_action = pa;

  switch (input.kind) {
    case ExpertInput::Kind::kDrc: {
      const CorrectionResult res = apply_correction(
          correction_, state_.tick, pa, input.vector, input.gripper);
      correction_ = res.state;
      rec.applied_action = res.applied_action;
      rec.correction_event = input.vector;
      rec.mode = ControlMode::kDrcCorrecting;
      rec.intervention_flag = true;
      break;
    }
    case ExpertInput::Kind::kAbsolute: {
      rec.applied_action = apply_absolute(pa, input.pose, true);
      rec.correction_event = input.pose.pose6();
      rec.mode = ControlMode::kAbsoluteOverride;
      rec.intervention_flag = true;
      // Without a held pedal the override lasts exactly this tick.
      if (correction_.mode != ControlMode::kAbsoluteOverride)
        correction_ = make_correction_state(correction_.decay_rate);
      break;
    }
    case ExpertInput::Kind::kNone: {
      if (correction_.mode == ControlMode::kAbsoluteOverride) {
        rec.applied_action = pa;
        rec.mode = ControlMode::kAbsoluteOverride;
      } else {
        const CorrectionResult res =
            apply_correction(correction_, state_.tick, pa, std::nullopt);
        correction_ = res.state;
        rec.applied_action = res.applied_action;
        rec.mode = res.state.mode;
      }
      break;
    }
  }

  state_ = sim::step(state_, rec.applied_action);
  steps_.push_back(std::move(rec));
  ++chunk_index_;
  pending_action_.reset();
}

Trajectory EpisodeRunner::finish() const {
  Trajectory t;
  t.task = task_;
  t.seed = seed_;
  t.steps = steps_;
  t.outcome = sim::score_state(state_, steps_);
  return t;
}

// ---------------------------------------------------------------------------
// Episodes

Trajectory run_reference_episode(const TaskSpec& task, std::uint64_t seed) {
  sim::SimState s = sim::reset(task, seed);
  std::vector<StepRecord> steps;
  while (!s.terminated) {
    StepRecord rec;
    rec.tick = s.tick;
    rec.observation = sim::observe(s);
    rec.policy_action = oracle::reference_action(s);
    rec.applied_action = rec.policy_action;
    s = sim::step(s, rec.applied_action);
    steps.push_back(std::move(rec));
  }
  Trajectory t{task, seed, std::move(steps), {}};
  t.outcome = sim::score_state(s, t.steps);
  return t;
}

Trajectory run_episode(std::shared_ptr<const policy::Policy> policy,
                       const TaskSpec& task, std::uint64_t seed,
                       const std::optional<oracle::OracleConfig>& supervisor,
                       double decay_rate) {
  EpisodeRunner run(std::move(policy), task, seed, decay_rate);
  oracle::OracleHistory history;
  while (!run.done()) {
    ExpertInput in;
    if (supervisor) {
      const Pose7 cand = run.candidate();
      in = ExpertInput::from(oracle::decide(run.state(), run.policy_action(),
                                            cand, *supervisor, history));
    }
    run.advance(in);
  }
  return run.finish();
}

// ---------------------------------------------------------------------------
// Plans and seeds

ExperimentPlan default_plan(TaskFamily family, std::uint64_t seed) {
  ExperimentPlan p;
  p.task = default_task(family);
  p.eval_trials = family == TaskFamily::kHookedPick ? 20 : 10;
  p.seed = seed;
  return p;
}

ValidationReport validate(const ExperimentPlan& plan) {
  ValidationReport r = validate(plan.task);
  auto add_all = [&r](const ValidationReport& more) {
    r.insert(r.end(), more.begin(), more.end());
  };
  add_all(oracle::validate(plan.oracle));
  add_all(policy::validate(plan.train));
  if (plan.n_demos < 1) r.push_back("n_demos >= 1");
  if (plan.rounds < 0) r.push_back("rounds >= 0");
  if (plan.corrections_per_round < 1) r.push_back("corrections_per_round >= 1");
  if (plan.eval_trials < 1) r.push_back("eval_trials >= 1");
  if (plan.update_epochs < 1) r.push_back("update_epochs >= 1");
  if (!(plan.update_learning_rate > 0.0 && std::isfinite(plan.update_learning_rate)))
    r.push_back("update_learning_rate > 0");
  for (int w : plan.hidden_widths)
    if (w < 1) r.push_back("hidden widths positive");
  if (!(plan.decay_rate > 0.0 && plan.decay_rate <= 1.0))
    r.push_back("decay_rate in (0,1]");
  if (!(plan.demo_region_scale > 0.0 && plan.demo_region_scale <= 1.0))
    r.push_back("demo_region_scale in (0,1]");
  return r;
}

namespace {

void require_valid(const ExperimentPlan& plan) {
  const ValidationReport r = validate(plan);
  if (!r.empty())
    throw Error(ErrorCode::kInvalidArgument, "invalid plan: " + r.front());
}

std::shared_ptr<const policy::Policy> as_policy(const PolicyParams& p) {
  return std::make_shared<policy::MlpPolicy>(p);
}

bool corrected(const Trajectory& t) {
  return std::any_of(t.steps.begin(), t.steps.end(),
                     [](const StepRecord& s) { return s.intervention_flag; });
}

double mean_rate(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& t : trajs) sum += t.outcome.intervention_rate;
  return sum / static_cast<double>(trajs.size());
}

CorrectionRound correction_round(std::shared_ptr<const policy::Policy> policy,
                                 const ExperimentPlan& plan,
                                 oracle::CorrectionMode mode,
                                 const TaskSpec& task, SeedStream stream,
                                 std::uint64_t round) {
  oracle::OracleConfig cfg = plan.oracle;
  cfg.mode = mode;
  const int budget = 10 * plan.corrections_per_round;
  CorrectionRound out;
  while (static_cast<int>(out.corrected.size()) < plan.corrections_per_round) {
    if (out.episodes_run >= budget)
      throw Error(ErrorCode::kBudgetExhausted,
                  "only " + std::to_string(out.corrected.size()) +
                      " corrected trajectories after " +
                      std::to_string(budget) + " episodes");
    Trajectory t = run_episode(policy, task,
                               stream_seed(plan, stream, round,
                                           static_cast<std::uint64_t>(out.episodes_run)),
                               cfg, plan.decay_rate);
    ++out.episodes_run;
    out.outcomes.push_back(t.outcome);
    if (corrected(t)) out.corrected.push_back(std::move(t));
  }
  out.mean_intervention_rate = mean_rate(out.corrected);
  return out;
}

Dataset merged(const Dataset& a, const std::vector<Trajectory>& more) {
  Dataset d = a;
  d.trajectories.insert(d.trajectories.end(), more.begin(), more.end());
  return d;
}

}  // namespace

TaskSpec demo_task(const ExperimentPlan& plan) {
  TaskSpec t = plan.task;
  t.actuation_bias = {0.0, 0.0, 0.0};
  t.target_region = t.target_region.scaled(plan.demo_region_scale);
  return t;
}

std::uint64_t stream_seed(const ExperimentPlan& plan, SeedStream stream,
                          std::uint64_t a, std::uint64_t b) {
  return derive_seed(plan.seed, static_cast<std::uint64_t>(stream), a, b);
}

std::vector<std::uint64_t> evaluation_seeds(const ExperimentPlan& plan) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < plan.eval_trials; ++i)
    seeds.push_back(stream_seed(plan, SeedStream::kEvaluation,
                                static_cast<std::uint64_t>(i)));
  return seeds;
}

Dataset collect_demos(const ExperimentPlan& plan) {
  require_valid(plan);
  const TaskSpec task = demo_task(plan);
  Dataset d{DatasetLabel::kPretraining, {}};
  for (int i = 0; i < plan.n_demos; ++i) {
    const std::uint64_t seed =
        stream_seed(plan, SeedStream::kDemo, static_cast<std::uint64_t>(i));
    Trajectory t = run_reference_episode(task, seed);
    if (t.outcome.score != 1.0)
      throw Error(ErrorCode::kOracleFailure,
                  "reference controller failed demo seed " + std::to_string(seed));
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

PolicyParams pretrain(const ExperimentPlan& plan, const Dataset& dp) {
  require_valid(plan);
  PolicyParams init = policy::init_params(
      plan.hidden_widths, stream_seed(plan, SeedStream::kTraining, 0),
      plan.train.horizon, plan.train.execute_steps);
  // A fresh network starts in the fitted coordinates; carrying its random
  // function across would scale near-constant channels by 1/spread.
  std::tie(init.observation_norm, init.action_norm) = policy::fit_normalization(
      dp, Dataset{DatasetLabel::kHumanCorrected, {}}, plan.train.horizon);
  policy::TrainConfig cfg = plan.train;
  cfg.seed = stream_seed(plan, SeedStream::kTraining, 1);
  return policy::train(init, dp, Dataset{DatasetLabel::kHumanCorrected, {}}, cfg)
      .params;
}

PolicyParams update_policy(const ExperimentPlan& plan, const PolicyParams& params,
                           const Dataset& dp, const Dataset& dh, int round) {
  policy::TrainConfig cfg = plan.train;
  cfg.epochs = plan.update_epochs;
  cfg.learning_rate = plan.update_learning_rate;
  cfg.seed = stream_seed(plan, SeedStream::kTraining, 2,
                         static_cast<std::uint64_t>(round));
  return policy::train(params, dp, dh, cfg).params;
}

CorrectionRound run_correction_round(std::shared_ptr<const policy::Policy> policy,
                                     const ExperimentPlan& plan,
                                     oracle::CorrectionMode mode, int round,
                                     const TaskSpec& task) {
  require_valid(plan);
  return correction_round(std::move(policy), plan, mode, task,
                          SeedStream::kCorrection,
                          static_cast<std::uint64_t>(round));
}

CorrectionRound run_correction_round(std::shared_ptr<const policy::Policy> policy,
                                     const ExperimentPlan& plan,
                                     oracle::CorrectionMode mode, int round) {
  return run_correction_round(std::move(policy), plan, mode, round, plan.task);
}

double evaluate(std::shared_ptr<const policy::Policy> policy,
                const TaskSpec& task, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty())
    throw Error(ErrorCode::kInvalidArgument, "no evaluation seeds");
  double sum = 0.0;
  for (std::uint64_t s : seeds)
    sum += run_episode(policy, task, s, std::nullopt).outcome.score;
  return sum / static_cast<double>(seeds.size());
}

ExperimentResult run_experiment(const ExperimentPlan& plan,
                                oracle::CorrectionMode mode) {
  require_valid(plan);
  const auto eval_seeds = evaluation_seeds(plan);
  ExperimentResult res;
  res.dp = collect_demos(plan);
  res.dh = Dataset{DatasetLabel::kHumanCorrected, {}};
  res.snapshots.push_back(pretrain(plan, res.dp));

  RoundMetrics row;
  row.round = 0;
  row.success_rate = evaluate(as_policy(res.snapshots.back()), plan.task, eval_seeds);
  res.rounds.push_back(row);

  for (int r = 0; r < plan.rounds; ++r) {
    const auto current = as_policy(res.snapshots.back());
    CorrectionRound cr = run_correction_round(current, plan, mode, r);
    RoundMetrics& prev = res.rounds.back();
    prev.intervention_rate = cr.mean_intervention_rate;
    prev.corrected_trajectories = static_cast<int>(cr.corrected.size());
    prev.episodes_run = cr.episodes_run;

    // D_H only grows; training sees a snapshot of both pools.
    res.dh.trajectories.insert(res.dh.trajectories.end(), cr.corrected.begin(),
                               cr.corrected.end());
    const Dataset dp_snapshot = res.dp;
    const Dataset dh_snapshot = res.dh;
    res.snapshots.push_back(
        update_policy(plan, res.snapshots.back(), dp_snapshot, dh_snapshot, r));

    RoundMetrics next;
    next.round = r + 1;
    next.success_rate =
        evaluate(as_policy(res.snapshots.back()), plan.task, eval_seeds);
    res.rounds.push_back(next);
  }
  return res;
}

std::vector<ComparisonRow> compare_corrections(const ExperimentPlan& plan) {
  const ExperimentResult drc = run_experiment(plan, oracle::CorrectionMode::kDrc);
  const ExperimentResult abs =
      run_experiment(plan, oracle::CorrectionMode::kAbsolute);
  std::vector<ComparisonRow> rows;
  for (int r = 0; r < plan.rounds; ++r) {
    ComparisonRow row;
    row.round = r;
    row.drc_rate = *drc.rounds[static_cast<std::size_t>(r)].intervention_rate;
    row.absolute_rate = *abs.rounds[static_cast<std::size_t>(r)].intervention_rate;
    row.drc_success = drc.rounds[static_cast<std::size_t>(r)].success_rate;
    row.absolute_success = abs.rounds[static_cast<std::size_t>(r)].success_rate;
    rows.push_back(row);
  }
  return rows;
}

TransferResult run_transfer(const PolicyParams& base, const Dataset& dp,
                            const Dataset& dh, const ExperimentPlan& plan,
                            const std::vector<std::string>& variants) {
  require_valid(plan);
  const auto eval_seeds = evaluation_seeds(plan);
  TransferResult out;
  out.variants.push_back(plan.task.object_variant);
  for (const auto& v : variants) out.variants.push_back(v);

  auto task_for = [&plan](const std::string& variant) {
    TaskSpec t = plan.task;
    t.object_variant = variant;
    return t;
  };
  auto row_for = [&](const PolicyParams& p) {
    std::vector<double> row;
    const auto pol = as_policy(p);
    for (const auto& v : out.variants)
      row.push_back(evaluate(pol, task_for(v), eval_seeds));
    return row;
  };

  out.policies.push_back("base");
  out.success.push_back(row_for(base));
  const auto base_policy = as_policy(base);
  for (std::size_t k = 0; k < variants.size(); ++k) {
    CorrectionRound cr = correction_round(base_policy, plan,
                                          oracle::CorrectionMode::kDrc,
                                          task_for(variants[k]),
                                          SeedStream::kTransfer, k);
    out.variant_intervention_rates.push_back(cr.mean_intervention_rate);
    const Dataset dh_all = merged(dh, cr.corrected);
    PolicyParams p = update_policy(plan, base, dp, dh_all,
                                   plan.rounds + static_cast<int>(k));
    out.policies.push_back("transfer:" + variants[k]);
    out.success.push_back(row_for(p));
    out.transferred.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-arm supervision

const char* to_string(AttentionEvent::Kind kind) {
  switch (kind) {
    case AttentionEvent::Kind::kRequest: return "request";
    case AttentionEvent::Kind::kGrant: return "grant";
    case AttentionEvent::Kind::kRelease: return "release";
    case AttentionEvent::Kind::kWithdraw: return "withdraw";
  }
  return "?";
}

namespace {

struct ArmSlot {
  std::optional<EpisodeRunner> runner;
  oracle::OracleHistory history;
  bool queued = false;
  std::int64_t request_tick = 0;
};

}  // namespace

FleetRound run_fleet_round(std::shared_ptr<const policy::Policy> policy,
                           const ExperimentPlan& plan, oracle::CorrectionMode mode,
                           int round, int n_arms) {
  require_valid(plan);
  if (n_arms < 1) throw Error(ErrorCode::kInvalidArgument, "n_arms >= 1");
  oracle::OracleConfig cfg = plan.oracle;
  cfg.mode = mode;
  const int budget = 10 * plan.corrections_per_round;
  const auto n = static_cast<std::size_t>(n_arms);

  FleetRound out;
  out.round = round;
  out.arm_episodes.assign(n, 0);
  out.arm_corrected.assign(n, 0);
  std::vector<double> rate_sums(n, 0.0);
  std::vector<ArmSlot> arms(n);
  std::deque<int> queue;
  int holder = -1;
  int started = 0;
  double wait_sum = 0.0;
  std::int64_t t = 0;

  auto log = [&out](std::int64_t tick, int arm, AttentionEvent::Kind k) {
    out.attention_log.push_back({tick, arm, k});
  };
  auto dequeue = [&queue](int arm) {
    queue.erase(std::remove(queue.begin(), queue.end(), arm), queue.end());
  };

  for (;;) {
    // Retire finished episodes and start new ones in arm order.
    for (std::size_t a = 0; a < n; ++a) {
      ArmSlot& slot = arms[a];
      if (slot.runner && slot.runner->done()) {
        Trajectory traj = slot.runner->finish();
        slot.runner.reset();
        if (holder == static_cast<int>(a)) {
          holder = -1;
          log(t, static_cast<int>(a), AttentionEvent::Kind::kRelease);
        }
        if (slot.queued) {
          slot.queued = false;
          dequeue(static_cast<int>(a));
          log(t, static_cast<int>(a), AttentionEvent::Kind::kWithdraw);
        }
        if (corrected(traj)) {
          rate_sums[a] += traj.outcome.intervention_rate;
          ++out.arm_corrected[a];
          out.corrected.push_back(std::move(traj));
        }
      }
      const bool enough =
          static_cast<int>(out.corrected.size()) >= plan.corrections_per_round;
      if (!slot.runner && !enough) {
        if (started >= budget)
          throw Error(ErrorCode::kBudgetExhausted,
                      "only " + std::to_string(out.corrected.size()) +
                          " corrected trajectories after " +
                          std::to_string(budget) + " episodes");
        slot.runner.emplace(policy, plan.task,
                            stream_seed(plan, SeedStream::kCorrection,
                                        static_cast<std::uint64_t>(round),
                                        static_cast<std::uint64_t>(started)),
                            plan.decay_rate);
        slot.history = {};
        ++started;
        ++out.arm_episodes[a];
      }
    }
    if (std::none_of(arms.begin(), arms.end(),
                     [](const ArmSlot& s) { return s.runner.has_value(); }))
      break;

    // Service order: lock holder, then the queue oldest first, then the rest.
    std::vector<int> order;
    if (holder >= 0) order.push_back(holder);
    for (int a : queue)
      if (a != holder) order.push_back(a);
    for (int a = 0; a < n_arms; ++a)
      if (std::find(order.begin(), order.end(), a) == order.end())
        order.push_back(a);

    std::vector<int> served;
    for (int a : order) {
      ArmSlot& slot = arms[static_cast<std::size_t>(a)];
      if (!slot.runner) continue;
      const Pose7 cand = slot.runner->candidate();
      const oracle::OracleHistory before = slot.history;
      const oracle::Decision d =
          oracle::decide(slot.runner->state(), slot.runner->policy_action(),
                         cand, cfg, slot.history);
      ExpertInput in;
      if (oracle::intervenes(d)) {
        const bool may_serve = holder == a || (holder < 0 && served.empty());
        if (may_serve) {
          if (holder != a) {
            if (!slot.queued) {
              log(t, a, AttentionEvent::Kind::kRequest);
              slot.request_tick = t;
            }
            log(t, a, AttentionEvent::Kind::kGrant);
            const std::int64_t wait = t - slot.request_tick;
            wait_sum += static_cast<double>(wait);
            out.max_wait = std::max(out.max_wait, wait);
            ++out.waits;
            if (slot.queued) {
              slot.queued = false;
              dequeue(a);
            }
            holder = a;
          }
          in = ExpertInput::from(d);
          served.push_back(a);
          // A relative correction is one-shot; an override keeps the lock.
          if (!slot.history.overriding) {
            holder = -1;
            log(t, a, AttentionEvent::Kind::kRelease);
          }
        } else {
          slot.history = before;  // the expert never saw this request
          if (!slot.queued) {
            slot.queued = true;
            slot.request_tick = t;
            queue.push_back(a);
            log(t, a, AttentionEvent::Kind::kRequest);
          }
        }
      } else {
        if (holder == a) {
          holder = -1;
          log(t, a, AttentionEvent::Kind::kRelease);
        }
        if (slot.queued) {
          slot.queued = false;
          dequeue(a);
          log(t, a, AttentionEvent::Kind::kWithdraw);
        }
      }
      slot.runner->advance(in);
    }
    std::sort(served.begin(), served.end());
    if (!served.empty()) ++out.attended_ticks;
    out.inputs_per_tick.push_back(std::move(served));
    ++t;
  }

  out.ticks = t;
  out.expert_utilization =
      t > 0 ? static_cast<double>(out.attended_ticks) / static_cast<double>(t) : 0.0;
  out.mean_wait = out.waits > 0 ? wait_sum / static_cast<double>(out.waits) : 0.0;
  out.mean_intervention_rate = mean_rate(out.corrected);
  for (std::size_t a = 0; a < n; ++a)
    out.arm_intervention_rates.push_back(
        out.arm_corrected[a] > 0 ? rate_sums[a] / out.arm_corrected[a] : 0.0);
  return out;
}

FleetResult run_fleet(int n_arms, const ExperimentPlan& plan,
                      oracle::CorrectionMode mode) {
  require_valid(plan);
  const auto eval_seeds = evaluation_seeds(plan);
  const Dataset dp = collect_demos(plan);
  Dataset dh{DatasetLabel::kHumanCorrected, {}};
  PolicyParams params = pretrain(plan, dp);
  FleetResult res;
  res.pretrained_success = evaluate(as_policy(params), plan.task, eval_seeds);
  for (int r = 0; r < plan.rounds; ++r) {
    FleetRound fr = run_fleet_round(as_policy(params), plan, mode, r, n_arms);
    dh = merged(dh, fr.corrected);
    params = update_policy(plan, params, dp, dh, r);
    fr.success_rate_after = evaluate(as_policy(params), plan.task, eval_seeds);
    res.rounds.push_back(std::move(fr));
  }
  return res;
}

}  // namespace drc::loop
