#include <doctest.h>

#include <map>
#include <set>

#include "drclab/loop.hpp"
#include "drclab/store.hpp"
#include "support.hpp"

using namespace drc;

namespace {

using testkit::FixedPolicy;

std::string dataset_text(const Dataset& d) {
  std::string s;
  for (const auto& t : d.trajectories) s += store::serialize_trajectory(t);
  return s;
}

struct Fixture {
  loop::ExperimentPlan plan = testkit::tiny_plan(21);
  Dataset dp;
  PolicyParams params;
  Fixture() {
    dp = loop::collect_demos(plan);
    params = loop::pretrain(plan, dp);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

// Replays an attention log and checks that the lock is never shared and that
// queued arms are granted in request order. Returns the grant waits.
std::vector<std::int64_t> audit(const loop::FleetRound& fr) {
  using K = loop::AttentionEvent::Kind;
  int holder = -1;
  std::map<int, std::pair<std::size_t, std::int64_t>> pending;  // arm -> (log index, tick)
  std::vector<std::int64_t> waits;
  for (std::size_t i = 0; i < fr.attention_log.size(); ++i) {
    const auto& e = fr.attention_log[i];
    switch (e.kind) {
      case K::kRequest:
        REQUIRE(pending.count(e.arm) == 0);
        pending[e.arm] = {i, e.tick};
        break;
      case K::kGrant: {
        REQUIRE(holder == -1);
        REQUIRE(pending.count(e.arm) == 1);
        const auto mine = pending[e.arm];
        for (const auto& [arm, other] : pending)
          if (arm != e.arm) CHECK(other.first > mine.first);
        waits.push_back(e.tick - mine.second);
        pending.erase(e.arm);
        holder = e.arm;
        break;
      }
      case K::kRelease:
        REQUIRE(holder == e.arm);
        holder = -1;
        break;
      case K::kWithdraw:
        REQUIRE(pending.count(e.arm) == 1);
        pending.erase(e.arm);
        break;
    }
  }
  return waits;
}

}  // namespace

TEST_CASE("default demonstrations all succeed") {
  const auto plan = loop::default_plan(TaskFamily::kHookedPick, 1);
  const Dataset dp = loop::collect_demos(plan);
  CHECK(dp.trajectories.size() == 20);
  CHECK(dp.label == DatasetLabel::kPretraining);
  for (const auto& t : dp.trajectories) {
    CHECK(t.outcome.score == 1.0);
    CHECK(t.task == loop::demo_task(plan));
    CHECK(t.task.actuation_bias == Vec3{0, 0, 0});
    CHECK(t.task.target_region == plan.task.target_region.scaled(0.75));
    CHECK(t.task.target_region.contains(sim::reset(t.task, t.seed).object_position));
  }
  CHECK(validate(dp).empty());
}

TEST_CASE("single demonstration and reproducible datasets") {
  auto plan = testkit::tiny_plan(9);
  plan.n_demos = 1;
  CHECK(loop::collect_demos(plan).trajectories.size() == 1);
  plan.n_demos = 3;
  const auto a = loop::collect_demos(plan);
  const auto b = loop::collect_demos(plan);
  CHECK(store::git_digest(dataset_text(a)) == store::git_digest(dataset_text(b)));
  plan.seed = 10;
  CHECK(store::git_digest(dataset_text(loop::collect_demos(plan))) !=
        store::git_digest(dataset_text(a)));
}

TEST_CASE("plan defaults and validation") {
  const auto hp = loop::default_plan(TaskFamily::kHookedPick, 1);
  const auto sw = loop::default_plan(TaskFamily::kStainWipe, 1);
  CHECK(hp.eval_trials == 20);
  CHECK(sw.eval_trials == 10);
  CHECK(hp.n_demos == 20);
  CHECK(hp.rounds == 3);
  CHECK(hp.corrections_per_round == 10);
  CHECK(hp.train.epochs == 300);
  CHECK(hp.update_epochs == 100);
  CHECK(hp.train.horizon == 16);
  CHECK(hp.train.execute_steps == 8);
  CHECK(loop::validate(hp).empty());
  auto bad = hp;
  bad.corrections_per_round = 0;
  CHECK_FALSE(loop::validate(bad).empty());
  CHECK_THROWS_AS(loop::collect_demos(bad), Error);
}

TEST_CASE("evaluation seeds never reuse demo or correction seeds") {
  const auto plan = loop::default_plan(TaskFamily::kHookedPick, 3);
  const auto eval = loop::evaluation_seeds(plan);
  std::set<std::uint64_t> others;
  for (std::uint64_t a = 0; a < 200; ++a) {
    others.insert(loop::stream_seed(plan, loop::SeedStream::kDemo, a));
    for (std::uint64_t r = 0; r < 6; ++r) {
      others.insert(loop::stream_seed(plan, loop::SeedStream::kCorrection, r, a));
      others.insert(loop::stream_seed(plan, loop::SeedStream::kTransfer, r, a));
    }
  }
  CHECK(std::set<std::uint64_t>(eval.begin(), eval.end()).size() == eval.size());
  for (auto s : eval) CHECK(others.count(s) == 0);
}

TEST_CASE("executor consumes eight actions per query") {
  auto pol = std::make_shared<FixedPolicy>(Pose7{{0.5, 0.3, 0.5}, {0, 0, 0}, 0});
  const auto tr = loop::run_episode(pol, default_task(TaskFamily::kHookedPick), 1, std::nullopt);
  CHECK(tr.steps.size() == 300);
  CHECK(pol->calls == 300 / 8 + 1);
  for (const auto& s : tr.steps) CHECK(s.applied_action == s.policy_action);
}

TEST_CASE("correction round keeps only corrected trajectories") {
  const auto& f = fixture();
  const auto pol = std::make_shared<policy::MlpPolicy>(f.params);
  const auto cr = loop::run_correction_round(pol, f.plan, oracle::CorrectionMode::kDrc, 0);
  CHECK(cr.corrected.size() == 2);
  CHECK(cr.episodes_run >= 2);
  CHECK(cr.outcomes.size() == static_cast<std::size_t>(cr.episodes_run));
  double sum = 0;
  for (const auto& t : cr.corrected) {
    CHECK(t.outcome.intervention_rate > 0.0);
    CHECK(validate(t).empty());
    sum += t.outcome.intervention_rate;
  }
  CHECK(cr.mean_intervention_rate == doctest::Approx(sum / 2));
  CHECK(cr.mean_intervention_rate > 0.0);
  CHECK(cr.mean_intervention_rate < 1.0);
}

TEST_CASE("budget guard stops a round that never gets corrected") {
  auto plan = fixture().plan;
  plan.oracle.trigger_distance = 10.0;
  plan.oracle.release_distance = 5.0;
  plan.oracle.gripper_trigger = 1.0;
  const auto pol = std::make_shared<policy::MlpPolicy>(fixture().params);
  try {
    loop::run_correction_round(pol, plan, oracle::CorrectionMode::kDrc, 0);
    FAIL("expected the budget guard");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBudgetExhausted);
  }
}

TEST_CASE("experiment pipeline shape and provenance") {
  auto plan = fixture().plan;
  plan.rounds = 2;
  const auto res = loop::run_experiment(plan);
  CHECK(res.rounds.size() == 3);
  CHECK(res.snapshots.size() == 3);
  CHECK(res.dp == fixture().dp);
  CHECK(res.dh.trajectories.size() == 4);
  CHECK(res.dh.label == DatasetLabel::kHumanCorrected);
  CHECK(res.snapshots[0] == fixture().params);
  CHECK(res.rounds[0].intervention_rate.has_value());
  CHECK(res.rounds[1].intervention_rate.has_value());
  CHECK_FALSE(res.rounds[2].intervention_rate.has_value());
  for (const auto& t : res.dh.trajectories) CHECK(t.outcome.intervention_rate > 0);

  // Rebuilding round 1 from its parts gives the same snapshot.
  const auto pol0 = std::make_shared<policy::MlpPolicy>(res.snapshots[0]);
  const auto cr = loop::run_correction_round(pol0, plan, oracle::CorrectionMode::kDrc, 0);
  const Dataset dh0{DatasetLabel::kHumanCorrected, cr.corrected};
  CHECK(loop::update_policy(plan, res.snapshots[0], res.dp, dh0, 0) == res.snapshots[1]);

  const auto again = loop::run_experiment(plan);
  CHECK(again.snapshots == res.snapshots);
  CHECK(again.dh == res.dh);
}

TEST_CASE("zero rounds reports the pretrained policy only") {
  auto plan = fixture().plan;
  plan.rounds = 0;
  const auto res = loop::run_experiment(plan);
  REQUIRE(res.rounds.size() == 1);
  CHECK(res.rounds[0].round == 0);
  CHECK_FALSE(res.rounds[0].intervention_rate.has_value());
  CHECK(res.dh.empty());
  const auto pol = std::make_shared<policy::MlpPolicy>(res.snapshots[0]);
  CHECK(res.rounds[0].success_rate ==
        loop::evaluate(pol, plan.task, loop::evaluation_seeds(plan)));
}

TEST_CASE("identity transfer leaves the matrix symmetric") {
  const auto& f = fixture();
  const auto res = loop::run_transfer(f.params, f.dp, Dataset{DatasetLabel::kHumanCorrected, {}},
                                      f.plan, {"raspberry"});
  REQUIRE(res.success.size() == 2);
  REQUIRE(res.success[0].size() == 2);
  CHECK(res.success[0][0] == res.success[0][1]);
  CHECK(res.success[1][0] == res.success[1][1]);
  CHECK(res.policies == std::vector<std::string>{"base", "transfer:raspberry"});
}

TEST_CASE("one-arm fleet round reduces to a correction round") {
  const auto& f = fixture();
  const auto pol = std::make_shared<policy::MlpPolicy>(f.params);
  for (auto mode : {oracle::CorrectionMode::kDrc, oracle::CorrectionMode::kAbsolute}) {
    const auto cr = loop::run_correction_round(pol, f.plan, mode, 0);
    const auto fr = loop::run_fleet_round(pol, f.plan, mode, 0, 1);
    CHECK(fr.corrected == cr.corrected);
    CHECK(fr.mean_intervention_rate == cr.mean_intervention_rate);
    CHECK(fr.arm_episodes[0] == cr.episodes_run);
    CHECK(fr.max_wait == 0);
  }
}

TEST_CASE("three-arm fleet keeps a single attention lock") {
  auto plan = fixture().plan;
  plan.corrections_per_round = 6;
  const auto pol = std::make_shared<policy::MlpPolicy>(fixture().params);
  for (auto mode : {oracle::CorrectionMode::kDrc, oracle::CorrectionMode::kAbsolute}) {
    const auto fr = loop::run_fleet_round(pol, plan, mode, 0, 3);
    // Episodes already running when the quota fills are allowed to finish.
    CHECK(fr.corrected.size() >= 6);
    CHECK(fr.corrected.size() <= 6 + 2);
    CHECK(fr.inputs_per_tick.size() == static_cast<std::size_t>(fr.ticks));
    std::int64_t attended = 0;
    for (const auto& arms : fr.inputs_per_tick) {
      CHECK(arms.size() <= 1);
      attended += !arms.empty();
    }
    // Counting oracle for the reported statistics.
    CHECK(attended == fr.attended_ticks);
    CHECK(fr.expert_utilization == static_cast<double>(attended) / static_cast<double>(fr.ticks));
    CHECK(fr.expert_utilization < 1.0);
    const auto waits = audit(fr);
    CHECK(static_cast<std::int64_t>(waits.size()) == fr.waits);
    std::int64_t mx = 0;
    double sum = 0;
    for (auto w : waits) {
      mx = std::max(mx, w);
      sum += static_cast<double>(w);
    }
    CHECK(mx == fr.max_wait);
    CHECK(fr.mean_wait == doctest::Approx(waits.empty() ? 0.0 : sum / waits.size()));
    // Every input tick belongs to some arm's granted span; flagged steps of
    // corrected trajectories add up to the inputs served.
    std::int64_t flagged = 0;
    for (const auto& t : fr.corrected)
      for (const auto& s : t.steps) flagged += s.intervention_flag;
    CHECK(flagged <= attended);
  }
}

TEST_CASE("fleet utilization saturates when every arm always needs help") {
  auto plan = fixture().plan;
  plan.corrections_per_round = 6;
  auto pol = std::make_shared<FixedPolicy>(Pose7{{0.1, 0.1, 0.9}, {0, 0, 0}, 0});
  const auto fr = loop::run_fleet_round(pol, plan, oracle::CorrectionMode::kAbsolute, 0, 3);
  audit(fr);
  // Nobody can trigger before the patience window fills; after that the
  // expert is never idle.
  const std::size_t warmup = static_cast<std::size_t>(plan.oracle.trigger_patience - 1);
  for (std::size_t t = warmup; t < fr.inputs_per_tick.size(); ++t)
    CHECK(fr.inputs_per_tick[t].size() == 1);
  CHECK(fr.attended_ticks == fr.ticks - static_cast<std::int64_t>(warmup));
  CHECK(fr.expert_utilization <= 1.0);
}

TEST_CASE("one-arm fleet reproduces the single-arm experiment") {
  auto plan = fixture().plan;
  plan.rounds = 2;
  const auto exp = loop::run_experiment(plan);
  const auto fleet = loop::run_fleet(1, plan);
  CHECK(fleet.pretrained_success == exp.rounds[0].success_rate);
  REQUIRE(fleet.rounds.size() == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(fleet.rounds[r].mean_intervention_rate == *exp.rounds[r].intervention_rate);
    CHECK(fleet.rounds[r].success_rate_after == exp.rounds[r + 1].success_rate);
  }
}
