// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any
// criterion fails. Runs headless, no network.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "drclab/cli.hpp"
#include "drclab/correction.hpp"
#include "drclab/loop.hpp"
#include "drclab/policy.hpp"
#include "drclab/store.hpp"

using namespace drc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const Verdict& v, double secs) {
  std::printf("%s %s (%.1f s): %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), secs,
              v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

// Each pipeline runs once; every criterion using it is charged its time.
struct Cached {
  loop::ExperimentResult result;
  double seconds = 0.0;
};

std::map<std::tuple<int, std::uint64_t, int>, Cached> experiments;

const Cached& experiment(TaskFamily family, std::uint64_t seed, oracle::CorrectionMode mode) {
  const auto key = std::make_tuple(static_cast<int>(family), seed, static_cast<int>(mode));
  auto it = experiments.find(key);
  if (it == experiments.end()) {
    const auto t0 = Clock::now();
    Cached c;
    c.result = loop::run_experiment(loop::default_plan(family, seed), mode);
    c.seconds = seconds_since(t0);
    it = experiments.emplace(key, std::move(c)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------------------

Verdict decay_exactness() {
  std::mt19937_64 e(20240521);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(e); };
  const int cases = 100000;
  double worst = 0.0;
  long evaluations = 0;
  for (int c = 0; c < cases; ++c) {
    const double r = c % 97 == 0 ? 1.0 : uni(1e-3, 1.0);
    // Script: a few inputs separated by random gaps, evaluated on every tick.
    const int inputs = 1 + static_cast<int>(e() % 4);
    std::vector<std::int64_t> at{0};
    for (int i = 1; i < inputs; ++i) at.push_back(at.back() + 1 + static_cast<std::int64_t>(e() % 40));
    const std::int64_t horizon = at.back() + static_cast<std::int64_t>(e() % 120);
    CorrectionState st = make_correction_state(r);
    Vec6 ref{};
    bool live = false;
    std::size_t next = 0;
    for (std::int64_t t = 0; t <= horizon; ++t) {
      const Pose7 pa{{uni(0.2, 0.8), uni(0.2, 0.8), uni(0.2, 0.8)},
                     {uni(-0.2, 0.2), uni(-0.2, 0.2), uni(-0.2, 0.2)},
                     uni(0, 1)};
      std::optional<Vec6> in;
      if (next < at.size() && at[next] == t) {
        Vec6 v;
        for (double& x : v) x = uni(-0.1, 0.1);
        in = v;
        ++next;
      }
      // Iterative oracle: replace on input, otherwise multiply by (1 - r).
      if (in) {
        ref = *in;
        live = true;
      } else if (live) {
        for (double& x : ref) x *= 1.0 - r;
      }
      if (live && norm(ref) < kZeroSnapThreshold) {
        ref = {};
        live = false;
      }
      const CorrectionResult res = apply_correction(st, t, pa, in);
      const Vec6 got = sub(res.applied_action.pose6(), pa.pose6());
      for (int i = 0; i < 6; ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
      st = res.state;
      ++evaluations;
    }
  }
  return {worst <= 1e-12, std::to_string(cases) + " scripts, " + std::to_string(evaluations) +
                              " ticks, max |closed - iterative| = " + num(worst * 1e15, 3) +
                              "e-15 (limit 1e-12)"};
}

std::vector<double> rates_of(const loop::ExperimentResult& r) {
  std::vector<double> out;
  for (const auto& row : r.rounds)
    if (row.intervention_rate) out.push_back(*row.intervention_rate);
  return out;
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

Verdict drc_efficiency() {
  bool ok = true;
  std::string detail;
  double secs = 0.0;
  for (TaskFamily fam : {TaskFamily::kHookedPick, TaskFamily::kStainWipe}) {
    const auto& d = experiment(fam, 1, oracle::CorrectionMode::kDrc);
    const auto& a = experiment(fam, 1, oracle::CorrectionMode::kAbsolute);
    secs += d.seconds + a.seconds;
    const auto dr = rates_of(d.result), ar = rates_of(a.result);
    detail += std::string(detail.empty() ? "" : "; ") + to_string(fam) + " drc/abs per round:";
    for (std::size_t k = 0; k < dr.size(); ++k) {
      const bool round_ok = dr[k] <= 0.8 * ar[k];
      ok = ok && round_ok;
      detail += " " + num(dr[k]) + "/" + num(ar[k]) + "=" + num(dr[k] / ar[k], 2) +
                (round_ok ? "" : "!");
    }
    const bool mono = strictly_decreasing(dr) && strictly_decreasing(ar);
    ok = ok && mono;
    if (!mono) detail += " (not decreasing)";
    // 10 corrections per round, seeds matched across modes.
    ok = ok && dr.size() == 3 && ar.size() == 3;
  }
  ok = ok && secs < 600.0;
  detail += "; pipelines " + num(secs, 0) + " s (limit 600)";
  return {ok, detail};
}

Verdict online_learning() {
  double pre = 0.0, last = 0.0, secs = 0.0;
  bool per_seed_ok = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto& c = experiment(TaskFamily::kHookedPick, seed, oracle::CorrectionMode::kDrc);
    secs += c.seconds;
    const auto& rows = c.result.rounds;
    pre += rows.front().success_rate / 3.0;
    last += rows.back().success_rate / 3.0;
    detail += " seed" + std::to_string(seed) + "=[";
    for (std::size_t k = 0; k < rows.size(); ++k) {
      detail += (k ? " " : "") + num(rows[k].success_rate, 2);
      if (k > 0 && rows[k].success_rate < rows[k - 1].success_rate - 0.1) per_seed_ok = false;
    }
    detail += "]";
  }
  const bool ok = pre <= 0.4 && last >= 0.8 && per_seed_ok && secs < 900.0;
  return {ok, "mean pretrain " + num(pre) + " (<= 0.4), mean round 3 " + num(last) +
                  " (>= 0.8), per-seed within 0.1:" + (per_seed_ok ? " yes" : " NO") + ";" +
                  detail + "; " + num(secs, 0) + " s (limit 900)"};
}

Verdict transfer() {
  // Base policies are the round-3 policies of the online-learning runs;
  // green_tomato is the dissimilar variant. All thresholds apply to 3-seed
  // means, as for online learning.
  const std::vector<std::string> variants{"orange_tomato", "green_tomato"};
  // mean[policy][variant]; rows base, transfer:orange, transfer:green;
  // columns raspberry, orange_tomato, green_tomato.
  std::vector<std::vector<double>> mean(3, std::vector<double>(3, 0.0));
  double secs = 0.0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto& c = experiment(TaskFamily::kHookedPick, seed, oracle::CorrectionMode::kDrc);
    const auto t0 = Clock::now();
    const auto plan = loop::default_plan(TaskFamily::kHookedPick, seed);
    const auto res = loop::run_transfer(c.result.snapshots.back(), c.result.dp, c.result.dh,
                                        plan, variants);
    secs += seconds_since(t0) + c.seconds;
    const auto& m = res.success;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) mean[i][j] += m[i][j] / 3.0;
    detail += " seed" + std::to_string(seed) + ": green " + num(m[0][2], 2) + "->" +
              num(m[2][2], 2) + ", orange " + num(m[0][1], 2) + "->" + num(m[1][1], 2) +
              ", base task " + num(m[0][0], 2) + "->" + num(m[1][0], 2) + "/" +
              num(m[2][0], 2) + ";";
  }
  const double drop = std::max(mean[0][0] - mean[1][0], mean[0][0] - mean[2][0]);
  const bool ok = mean[0][2] < 0.3 && mean[2][2] >= 0.6 && drop <= 0.2 && secs < 600.0;
  return {ok, "3-seed mean: dissimilar variant " + num(mean[0][2]) + " (< 0.3) -> " +
                  num(mean[2][2]) + " (>= 0.6), base-task drop " + num(drop) + " (<= 0.2);" +
                  detail + " " + num(secs, 0) + " s incl. base pipelines (limit 600)"};
}

// Small random datasets for the trainer checks.
Dataset random_pool(std::mt19937_64& e, DatasetLabel label, int trajs, int min_len, int max_len) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d{label, {}};
  for (int i = 0; i < trajs; ++i) {
    Trajectory t;
    t.task = default_task(TaskFamily::kHookedPick);
    t.seed = e();
    const int len = min_len + static_cast<int>(e() % static_cast<std::uint64_t>(max_len - min_len + 1));
    for (int k = 0; k < len; ++k) {
      StepRecord s;
      s.tick = k;
      s.observation.gripper_pose = {{u(e), u(e), u(e)}, {0.2 * u(e) - 0.1, 0.2 * u(e) - 0.1, 0.1 * u(e)}, u(e)};
      s.observation.target_sighting = {u(e), u(e), u(e)};
      s.observation.contact_flag = u(e) < 0.5;
      s.observation.task_phase_hint = u(e);
      s.observation.appearance = u(e);
      s.policy_action = {{u(e), u(e), u(e)}, {0.1 * u(e), 0.1 * u(e), 0.1 * u(e)}, u(e)};
      s.applied_action = {{u(e), u(e), u(e)}, {0.1 * u(e), 0.1 * u(e), 0.1 * u(e)}, u(e)};
      t.steps.push_back(s);
    }
    t.outcome.ticks_used = len;
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

Verdict trainer_correctness() {
  std::mt19937_64 e(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const Dataset dp = random_pool(e, DatasetLabel::kPretraining, 3, 4, 12);
    const Dataset dh = random_pool(e, DatasetLabel::kHumanCorrected, 2, 4, 12);
    PolicyParams p = policy::init_params({6, 5}, e(), 4, 2);
    std::tie(p.observation_norm, p.action_norm) = policy::fit_normalization(dp, dh, 4);
    for (double& w : p.weights) w = 0.5 * u(e);
    Rng rng(e());
    const policy::Batch batch = policy::make_batch(dp, dh, 8, rng, 4);
    std::vector<double> grad;
    policy::loss_and_gradient(p, batch, grad);
    for (int k = 0; k < 64; ++k) {
      const std::size_t i = static_cast<std::size_t>(e() % p.weights.size());
      const double h = 1e-6;
      PolicyParams plus = p, minus = p;
      plus.weights[i] += h;
      minus.weights[i] -= h;
      const double fd = (policy::loss(plus, batch) - policy::loss(minus, batch)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-7});
      worst = std::max(worst, std::abs(fd - grad[i]) / denom);
    }
  }

  // One sample, many epochs.
  const Dataset one = random_pool(e, DatasetLabel::kPretraining, 1, 1, 1);
  PolicyParams p = policy::init_params({32}, 5, 16, 8);
  std::tie(p.observation_norm, p.action_norm) =
      policy::fit_normalization(one, Dataset{DatasetLabel::kHumanCorrected, {}}, 16);
  policy::TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.batch_size = 2;
  cfg.eval_batch_size = 2;
  cfg.learning_rate = 3e-3;
  const auto tr = policy::train(p, one, Dataset{DatasetLabel::kHumanCorrected, {}}, cfg);
  const double final_loss = policy::loss(
      tr.params, std::vector<policy::Sample>{policy::slice_window(
                     one.trajectories[0], 0, 16, DatasetLabel::kPretraining, 0)});
  return {worst < 1e-4 && final_loss < 1e-3,
          "max relative gradient error " + num(worst * 1e7, 3) + "e-7 over 64 x 20 (< 1e-4); "
          "memorization loss " + num(final_loss * 1e6, 3) + "e-6 (< 1e-3)"};
}

// Upper 99% chi-square point (Wilson-Hilferty).
double chi2_crit99(int df) {
  const double z = 2.3263478740408408, k = df, a = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

Verdict equal_proportion() {
  std::mt19937_64 e(99);
  const Dataset dp = random_pool(e, DatasetLabel::kPretraining, 6, 5, 14);
  const Dataset dh = random_pool(e, DatasetLabel::kHumanCorrected, 4, 5, 14);
  // Identify each drawn sample's step by its observation.
  std::map<double, std::pair<std::size_t, std::size_t>> where[2];
  std::vector<std::vector<double>> counts[2];
  for (int p = 0; p < 2; ++p) {
    const Dataset& d = p == 0 ? dp : dh;
    counts[p].resize(d.trajectories.size());
    for (std::size_t t = 0; t < d.trajectories.size(); ++t) {
      counts[p][t].assign(d.trajectories[t].steps.size(), 0.0);
      for (std::size_t k = 0; k < d.trajectories[t].steps.size(); ++k)
        where[p][d.trajectories[t].steps[k].observation.task_phase_hint] = {t, k};
    }
  }
  Rng rng(2024);
  const int batches = 10000, bs = 32;
  int unsplit = 0;
  for (int b = 0; b < batches; ++b) {
    const auto batch = policy::make_batch(dp, dh, bs, rng);
    int np = 0;
    for (const auto& s : batch) {
      const int p = s.provenance == DatasetLabel::kPretraining ? 0 : 1;
      np += p == 0;
      const auto [t, k] = where[p].at(s.observation.task_phase_hint);
      counts[p][t][k] += 1.0;
    }
    if (np != bs / 2 || static_cast<int>(batch.size()) != bs) ++unsplit;
  }
  // Pooled over every (pool, trajectory, step) cell: trajectories uniform
  // within a pool, steps uniform within a trajectory.
  double stat = 0.0;
  int cells = 0;
  for (int p = 0; p < 2; ++p) {
    const double per_traj = (bs / 2.0) * batches / static_cast<double>(counts[p].size());
    for (const auto& traj : counts[p])
      for (double obs : traj) {
        const double expct = per_traj / static_cast<double>(traj.size());
        stat += (obs - expct) * (obs - expct) / expct;
        ++cells;
      }
  }
  const int df = cells - 2;
  const double crit = chi2_crit99(df);
  return {unsplit == 0 && stat < crit,
          std::to_string(batches) + " batches of " + std::to_string(bs) + ", unsplit " +
              std::to_string(unsplit) + "; chi-square " + num(stat, 1) + " on " +
              std::to_string(df) + " df (99% point " + num(crit, 1) + ")"};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "drclab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "drclab %s: %s", args[1].c_str(), err.str().c_str());
  return code;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      files[fs::relative(entry.path(), root).string()] = store::read_file(entry.path());
  return files;
}

fs::path scratch_root() {
  const auto dir = fs::temp_directory_path() / ("drclab-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Verdict determinism(const fs::path& root) {
  const auto a = root / "exp-a", b = root / "exp-b";
  if (cli({"experiment", "--seed", "7", "--out", a.string()}) != 0 ||
      cli({"experiment", "--seed", "7", "--out", b.string()}) != 0)
    return {false, "experiment command failed"};
  const auto ta = tree(a), tb = tree(b);
  int reports = 0, trajs = 0, policies = 0;
  for (const auto& [name, bytes] : ta) {
    reports += name.ends_with(".tsv");
    trajs += name.ends_with(".txt");
    policies += name.ends_with(".bin");
  }
  const bool same = ta == tb;
  std::string diff;
  if (!same)
    for (const auto& [name, bytes] : ta)
      if (!tb.count(name) || tb.at(name) != bytes) diff += " " + name;
  return {same && reports > 0 && trajs > 0 && policies > 0,
          std::to_string(ta.size()) + " files (" + std::to_string(reports) + " report, " +
              std::to_string(trajs) + " trajectory, " + std::to_string(policies) +
              " policy) " + (same ? "byte-identical" : "differ:" + diff)};
}

const store::Table& table(const std::vector<store::Table>& ts, const std::string& name) {
  for (const auto& t : ts)
    if (t.name == name) return t;
  throw Error(ErrorCode::kFormat, "report lacks table " + name);
}

std::size_t column(const store::Table& t, const std::string& name) {
  const auto it = std::find(t.columns.begin(), t.columns.end(), name);
  if (it == t.columns.end()) throw Error(ErrorCode::kFormat, t.name + " lacks column " + name);
  return static_cast<std::size_t>(it - t.columns.begin());
}

Verdict fleet(const fs::path& root) {
  const auto three = root / "fleet-3", one = root / "fleet-1";
  if (cli({"fleet", "--seed", "7", "--arms", "3", "--out", three.string()}) != 0 ||
      cli({"fleet", "--seed", "7", "--arms", "1", "--out", one.string()}) != 0)
    return {false, "fleet command failed"};

  // Audit the 3-arm attention log and per-tick inputs.
  const auto logs = store::parse_report(store::read_file(three / "attention.tsv"), nullptr);
  const auto& att = table(logs, "attention");
  const auto& inp = table(logs, "inputs");
  std::map<std::string, int> holder;  // round -> arm holding the expert
  std::map<std::pair<std::string, std::string>, std::string> granted;  // (round, tick) -> arm
  int violations = 0, grants = 0;
  for (const auto& row : att.rows) {
    const std::string& round = row[column(att, "round")];
    const int arm = std::stoi(row[column(att, "arm")]);
    const std::string& ev = row[column(att, "event")];
    if (!holder.count(round)) holder[round] = -1;
    if (ev == "grant") {
      ++grants;
      if (holder[round] != -1) ++violations;
      holder[round] = arm;
    } else if (ev == "release") {
      if (holder[round] != arm) ++violations;
      holder[round] = -1;
    }
  }
  std::int64_t ticks = 0, attended = 0;
  for (const auto& row : inp.rows) {
    ++ticks;
    const std::string& arms = row[column(inp, "arms")];
    if (arms == "-") continue;
    ++attended;
    if (arms.find(',') != std::string::npos) ++violations;
  }
  // Utilization reported in the summary matches the log.
  const auto rep3 = store::parse_report(store::read_file(three / "report.tsv"), nullptr);
  const auto& fr3 = table(rep3, "fleet_rounds");
  std::int64_t rep_ticks = 0, rep_attended = 0;
  for (const auto& row : fr3.rows) {
    rep_ticks += std::stoll(row[column(fr3, "ticks")]);
    rep_attended += std::stoll(row[column(fr3, "attended_ticks")]);
  }
  const bool log_consistent = rep_ticks == ticks && rep_attended == attended;

  // One arm against the single-arm experiment (same seed, run for determinism).
  const auto exp = store::parse_report(store::read_file(root / "exp-a" / "report.tsv"), nullptr);
  const auto& rounds = table(exp, "rounds");
  const auto rep1 = store::parse_report(store::read_file(one / "report.tsv"), nullptr);
  const auto& fr1 = table(rep1, "fleet_rounds");
  const auto& pre1 = table(rep1, "pretrained");
  bool reduces = pre1.rows[0][0] == rounds.rows[0][column(rounds, "success_rate")] &&
                 fr1.rows.size() + 1 == rounds.rows.size();
  for (std::size_t r = 0; reduces && r < fr1.rows.size(); ++r) {
    reduces = fr1.rows[r][column(fr1, "mean_intervention_rate")] ==
                  rounds.rows[r][column(rounds, "intervention_rate")] &&
              fr1.rows[r][column(fr1, "success_after")] ==
                  rounds.rows[r + 1][column(rounds, "success_rate")];
  }
  const double util = ticks ? static_cast<double>(attended) / static_cast<double>(ticks) : 0.0;
  return {violations == 0 && grants > 0 && log_consistent && reduces,
          "3 arms: " + std::to_string(ticks) + " ticks audited, " + std::to_string(grants) +
              " grants, " + std::to_string(violations) + " violations, utilization " + num(util) +
              (log_consistent ? "" : " (summary disagrees with log)") +
              "; 1 arm equals the single-arm experiment: " + (reduces ? "yes" : "NO")};
}

}  // namespace

int main() {
  const fs::path root = scratch_root();
  auto run = [](const std::string& name, const std::function<Verdict()>& f) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    report(name, v, seconds_since(t0));
  };
  {
    const auto t0 = Clock::now();
    const Verdict v = decay_exactness();
    const double secs = seconds_since(t0);
    report("decay-law exactness", {v.pass && secs < 5.0, v.detail + ", runtime limit 5 s"}, secs);
  }
  run("DRC efficiency", drc_efficiency);
  run("online learning", online_learning);
  run("transfer", transfer);
  run("trainer correctness", trainer_correctness);
  run("equal-proportion sampling", equal_proportion);
  run("determinism", [&] { return determinism(root); });
  run("fleet", [&] { return fleet(root); });
  fs::remove_all(root);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
