#pragma once

// Online imitation-learning pipeline: demonstrations, pretraining,
// supervised correction rounds, retraining and evaluation, plus the task
// transfer and multi-arm supervision experiments built from the same parts.

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "drclab/correction.hpp"
#include "drclab/domain.hpp"
#include "drclab/oracle.hpp"
#include "drclab/policy.hpp"
#include "drclab/sim.hpp"

namespace drc::loop {

// What the expert supplies on one tick.
struct ExpertInput {
  enum class Kind { kNone, kDrc, kAbsolute };
  Kind kind = Kind::kNone;
  Vec6 vector{};
  std::optional<double> gripper;
  Pose7 pose;

  static ExpertInput none() { return {}; }
  static ExpertInput from(const oracle::Decision& d);
};

// Drives one episode tick by tick: chunked policy execution, arbitration of
// expert input and recording.
class EpisodeRunner {
 public:
  EpisodeRunner(std::shared_ptr<const policy::Policy> policy, TaskSpec task,
                std::uint64_t seed, double decay_rate = kDefaultDecayRate);

  bool done() const { return state_.terminated; }
  const sim::SimState& state() const { return state_; }
  const CorrectionState& correction() const { return correction_; }
  std::int64_t tick() const { return state_.tick; }

  // Policy action for the current tick (queries the policy when the current
  // chunk is used up). Idempotent until advance().
  const Pose7& policy_action();
  // Policy action with any live decayed offset: what runs if nobody acts.
  Pose7 candidate();

  // Pedal transitions take effect on the current tick.
  void pedal(PedalKind kind);
  void advance(const ExpertInput& input);

  Trajectory finish() const;

 private:
  std::shared_ptr<const policy::Policy> policy_;
  TaskSpec task_;
  std::uint64_t seed_;
  sim::SimState state_;
  CorrectionState correction_;
  std::vector<Pose7> chunk_;
  std::size_t chunk_index_ = 0;
  std::optional<Pose7> pending_action_;
  Observation pending_obs_;
  std::vector<StepRecord> steps_;
};

// Runs the reference controller alone.
Trajectory run_reference_episode(const TaskSpec& task, std::uint64_t seed);

// Runs a policy with an optional scripted supervisor.
Trajectory run_episode(std::shared_ptr<const policy::Policy> policy,
                       const TaskSpec& task, std::uint64_t seed,
                       const std::optional<oracle::OracleConfig>& supervisor,
                       double decay_rate = kDefaultDecayRate);

struct ExperimentPlan {
  TaskSpec task = default_task(TaskFamily::kHookedPick);
  int n_demos = 20;
  int rounds = 3;
  int corrections_per_round = 10;
  int eval_trials = 20;
  oracle::OracleConfig oracle;
  policy::TrainConfig train;  // pretraining run
  int update_epochs = 100;    // each online update
  double update_learning_rate = 1e-3;
  std::vector<int> hidden_widths{64, 64};
  double decay_rate = kDefaultDecayRate;
  double demo_region_scale = 0.75;
  std::uint64_t seed = 0;
};

// Default plan for a family: 20 evaluation trials for HookedPick, 10 for
// StainWipe.
ExperimentPlan default_plan(TaskFamily family, std::uint64_t seed);

ValidationReport validate(const ExperimentPlan& plan);

// Nominal conditions used for demonstrations: no actuation bias and a
// shrunken target region.
TaskSpec demo_task(const ExperimentPlan& plan);

enum class SeedStream : std::uint64_t {
  kDemo = 1,
  kCorrection = 2,
  kEvaluation = 3,
  kTraining = 4,
  kTransfer = 5,
};

std::uint64_t stream_seed(const ExperimentPlan& plan, SeedStream stream,
                          std::uint64_t a, std::uint64_t b = 0);
std::vector<std::uint64_t> evaluation_seeds(const ExperimentPlan& plan);

Dataset collect_demos(const ExperimentPlan& plan);

PolicyParams pretrain(const ExperimentPlan& plan, const Dataset& dp);

PolicyParams update_policy(const ExperimentPlan& plan, const PolicyParams& params,
                           const Dataset& dp, const Dataset& dh, int round);

struct CorrectionRound {
  std::vector<Trajectory> corrected;
  double mean_intervention_rate = 0.0;
  int episodes_run = 0;
  std::vector<EpisodeOutcome> outcomes;  // every episode, corrected or not
};

CorrectionRound run_correction_round(
    std::shared_ptr<const policy::Policy> policy, const ExperimentPlan& plan,
    oracle::CorrectionMode mode, int round, const TaskSpec& task);

CorrectionRound run_correction_round(
    std::shared_ptr<const policy::Policy> policy, const ExperimentPlan& plan,
    oracle::CorrectionMode mode, int round);

// Mean episode score over the seeds (partial successes count 0.5).
double evaluate(std::shared_ptr<const policy::Policy> policy,
                const TaskSpec& task, const std::vector<std::uint64_t>& seeds);

struct RoundMetrics {
  int round = 0;
  double success_rate = 0.0;
  // Corrections gathered with this round's policy; absent for the last one.
  std::optional<double> intervention_rate;
  int corrected_trajectories = 0;
  int episodes_run = 0;
};

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  std::vector<PolicyParams> snapshots;  // index = round
  Dataset dp;
  Dataset dh;
};

// Pretrain, then for each round: correct, grow D_H, retrain, evaluate.
// Row r describes the policy after r updates; its intervention rate comes
// from the corrections gathered with that policy.
ExperimentResult run_experiment(
    const ExperimentPlan& plan,
    oracle::CorrectionMode mode = oracle::CorrectionMode::kDrc);

struct ComparisonRow {
  int round = 0;
  double drc_rate = 0.0;
  double absolute_rate = 0.0;
  double drc_success = 0.0;
  double absolute_success = 0.0;
};

// Two independent pipelines, one per correction mode, on matched seeds.
std::vector<ComparisonRow> compare_corrections(const ExperimentPlan& plan);

struct TransferResult {
  std::vector<std::string> policies;  // row labels
  std::vector<std::string> variants;  // column labels
  std::vector<std::vector<double>> success;  // [policy][variant]
  std::vector<PolicyParams> transferred;     // one per variant
  std::vector<double> variant_intervention_rates;
};

// Evaluates the base policy on every variant, then for each variant gathers
// DRC corrections, retrains from the base parameters and re-evaluates.
TransferResult run_transfer(const PolicyParams& base, const Dataset& dp,
                            const Dataset& dh, const ExperimentPlan& plan,
                            const std::vector<std::string>& variants);

// ---------------------------------------------------------------------------
// Multi-arm supervision

struct AttentionEvent {
  enum class Kind { kRequest, kGrant, kRelease, kWithdraw };
  std::int64_t tick = 0;
  int arm = 0;
  Kind kind = Kind::kRequest;
};

const char* to_string(AttentionEvent::Kind kind);

struct FleetRound {
  int round = 0;
  std::vector<double> arm_intervention_rates;  // mean over corrected trajs
  std::vector<int> arm_corrected;
  std::vector<int> arm_episodes;
  double mean_intervention_rate = 0.0;
  double expert_utilization = 0.0;
  std::int64_t ticks = 0;
  std::int64_t attended_ticks = 0;
  double mean_wait = 0.0;
  std::int64_t max_wait = 0;
  std::int64_t waits = 0;
  std::vector<AttentionEvent> attention_log;
  // Per global tick, arms that received expert input.
  std::vector<std::vector<int>> inputs_per_tick;
  std::vector<Trajectory> corrected;
  double success_rate_after = 0.0;
};

struct FleetResult {
  double pretrained_success = 0.0;
  std::vector<FleetRound> rounds;
};

// One lockstep correction round across n arms sharing a single expert.
FleetRound run_fleet_round(std::shared_ptr<const policy::Policy> policy,
                           const ExperimentPlan& plan, oracle::CorrectionMode mode,
                           int round, int n_arms);

FleetResult run_fleet(int n_arms, const ExperimentPlan& plan,
                      oracle::CorrectionMode mode = oracle::CorrectionMode::kDrc);

}  // namespace drc::loop
