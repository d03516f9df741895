#include "drclab/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "drclab/config.hpp"
#include "drclab/loop.hpp"
#include "drclab/server.hpp"
#include "drclab/session.hpp"
#include "drclab/store.hpp"

namespace drc {

namespace fs = std::filesystem;
using store::format_double;
using store::Table;

namespace {

// Every plan field is reachable from the command line; unset flags keep
// the config file value or the family default.
struct PlanFlags {
  std::optional<std::uint64_t> seed;
  std::string task = "hooked-pick";
  std::string config;
  std::optional<int> n_demos, rounds, corrections, eval_trials;
  std::optional<int> epochs, update_epochs, batch_size, horizon, execute_steps, eval_batch;
  std::optional<double> lr, update_lr;
  std::optional<std::string> optimizer;
  std::optional<bool> cosine;
  std::optional<std::vector<int>> hidden;
  std::optional<double> decay_rate, demo_region_scale;
  std::optional<double> trigger, release, gain, gripper_trigger;
  std::optional<int> patience;
  std::optional<std::vector<double>> bias, region, stain_radius;
  std::optional<double> noise, grasp_tolerance;
  std::optional<std::string> variant;
};

void add_plan_flags(CLI::App* app, PlanFlags& f, bool seed_required) {
  auto* seed = app->add_option("--seed", f.seed, "plan seed (all randomness derives from it)");
  if (seed_required) seed->required();
  app->add_option("--task", f.task, "task family")
      ->check(CLI::IsMember({"hooked-pick", "stain-wipe"}));
  app->add_option("--config", f.config, "plan JSON; flags override it")->check(CLI::ExistingFile);
  auto* plan = "plan";
  app->add_option("--n-demos", f.n_demos, "pretraining demonstrations")->group(plan);
  app->add_option("--rounds", f.rounds, "online rounds")->group(plan);
  app->add_option("--corrections", f.corrections, "corrected trajectories per round")->group(plan);
  app->add_option("--eval-trials", f.eval_trials, "evaluation episodes")->group(plan);
  app->add_option("--decay-rate", f.decay_rate, "DRC decay rate per policy tick")->group(plan);
  app->add_option("--demo-region-scale", f.demo_region_scale,
                  "target region scale for demonstrations")->group(plan);
  auto* train = "training";
  app->add_option("--epochs", f.epochs, "pretraining epochs")->group(train);
  app->add_option("--update-epochs", f.update_epochs, "epochs per online update")->group(train);
  app->add_option("--batch-size", f.batch_size, "minibatch size (even)")->group(train);
  app->add_option("--lr", f.lr, "pretraining learning rate")->group(train);
  app->add_option("--update-lr", f.update_lr, "online update learning rate")->group(train);
  app->add_option("--optimizer", f.optimizer, "sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}))->group(train);
  app->add_option("--cosine-decay", f.cosine, "cosine learning-rate decay (true/false)")
      ->group(train);
  app->add_option("--hidden", f.hidden, "hidden layer widths")->delimiter(',')->group(train);
  app->add_option("--horizon", f.horizon, "predicted steps per chunk")->group(train);
  app->add_option("--execute-steps", f.execute_steps, "executed steps per chunk")->group(train);
  app->add_option("--eval-batch-size", f.eval_batch, "fixed loss-tracking batch")->group(train);
  auto* oracle = "expert";
  app->add_option("--trigger", f.trigger, "deviation that arms an intervention")->group(oracle);
  app->add_option("--release", f.release, "deviation that ends an override")->group(oracle);
  app->add_option("--patience", f.patience, "ticks over trigger before acting")->group(oracle);
  app->add_option("--gain", f.gain, "DRC vector gain")->group(oracle);
  app->add_option("--gripper-trigger", f.gripper_trigger, "gripper disagreement trigger")
      ->group(oracle);
  auto* task = "task";
  app->add_option("--bias", f.bias, "actuation bias x,y,z")->delimiter(',')->expected(3)
      ->group(task);
  app->add_option("--region", f.region, "target region lo_x,lo_y,lo_z,hi_x,hi_y,hi_z")
      ->delimiter(',')->expected(6)->group(task);
  app->add_option("--stain-radius", f.stain_radius, "stain radius range lo,hi")
      ->delimiter(',')->expected(2)->group(task);
  app->add_option("--noise", f.noise, "sensing noise std")->group(task);
  app->add_option("--grasp-tolerance", f.grasp_tolerance, "grasp tolerance")->group(task);
  app->add_option("--variant", f.variant, "object variant")->group(task);
}

loop::ExperimentPlan build_plan(const PlanFlags& f) {
  const TaskFamily family = task_family_from_string(f.task);
  loop::ExperimentPlan p = loop::default_plan(family, f.seed.value_or(0));
  if (!f.config.empty()) p = config::parse_plan(store::read_file(f.config), p);
  if (f.seed) p.seed = *f.seed;
  if (p.task.family != family && !f.config.empty())
    throw Error(ErrorCode::kInvalidArgument, "--task disagrees with the config file");
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(p.n_demos, f.n_demos);
  set(p.rounds, f.rounds);
  set(p.corrections_per_round, f.corrections);
  set(p.eval_trials, f.eval_trials);
  set(p.decay_rate, f.decay_rate);
  set(p.demo_region_scale, f.demo_region_scale);
  set(p.train.epochs, f.epochs);
  set(p.update_epochs, f.update_epochs);
  set(p.train.batch_size, f.batch_size);
  set(p.train.learning_rate, f.lr);
  set(p.update_learning_rate, f.update_lr);
  if (f.optimizer)
    p.train.optimizer = *f.optimizer == "adam" ? policy::Optimizer::kAdam : policy::Optimizer::kSgd;
  set(p.train.cosine_decay, f.cosine);
  set(p.hidden_widths, f.hidden);
  set(p.train.horizon, f.horizon);
  set(p.train.execute_steps, f.execute_steps);
  set(p.train.eval_batch_size, f.eval_batch);
  set(p.oracle.trigger_distance, f.trigger);
  set(p.oracle.release_distance, f.release);
  set(p.oracle.trigger_patience, f.patience);
  set(p.oracle.correction_gain, f.gain);
  set(p.oracle.gripper_trigger, f.gripper_trigger);
  if (f.bias) p.task.actuation_bias = {(*f.bias)[0], (*f.bias)[1], (*f.bias)[2]};
  if (f.region) {
    const auto& r = *f.region;
    p.task.target_region = Box{{r[0], r[1], r[2]}, {r[3], r[4], r[5]}};
  }
  if (f.stain_radius) p.task.stain_radius_range = {(*f.stain_radius)[0], (*f.stain_radius)[1]};
  set(p.task.sensing_noise_std, f.noise);
  set(p.task.grasp_tolerance, f.grasp_tolerance);
  set(p.task.object_variant, f.variant);
  const ValidationReport r = loop::validate(p);
  if (!r.empty()) throw Error(ErrorCode::kInvalidArgument, "invalid plan: " + r.front());
  return p;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(std::uint64_t v) { return std::to_string(v); }

std::shared_ptr<const policy::Policy> as_policy(const PolicyParams& p) {
  return std::make_shared<policy::MlpPolicy>(p);
}

void write_plan(const fs::path& out, const loop::ExperimentPlan& plan) {
  store::write_file(out / "plan.json", config::render_plan(plan));
}

Table episodes_table(const std::string& name, const std::vector<Trajectory>& trajs) {
  Table t{name, {"episode", "seed", "score", "phase", "ticks", "intervention_rate", "corrected"}, {}};
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    const bool corrected = std::any_of(tr.steps.begin(), tr.steps.end(),
                                       [](const StepRecord& s) { return s.intervention_flag; });
    t.rows.push_back({fmt(static_cast<std::int64_t>(i)), fmt(tr.seed), fmt(tr.outcome.score),
                      to_string(tr.outcome.phase_reached), fmt(tr.outcome.ticks_used),
                      fmt(tr.outcome.intervention_rate), corrected ? "1" : "0"});
  }
  return t;
}

void print_tables(std::ostream& out, const std::vector<Table>& tables) {
  for (const auto& t : tables) {
    out << "[" << t.name << "]\n";
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "\t" : "") << t.columns[i];
    out << "\n";
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
      out << "\n";
    }
  }
}

void finish_report(std::ostream& out, const fs::path& dir, std::uint64_t seed,
                   const std::vector<Table>& tables) {
  store::save_report(dir / "report.tsv", seed, tables);
  print_tables(out, tables);
}

PolicyParams policy_or_pretrain(const std::string& path, const loop::ExperimentPlan& plan) {
  if (!path.empty()) return store::load_policy(path);
  return loop::pretrain(plan, loop::collect_demos(plan));
}

Dataset dataset_or_empty(const std::string& dir, DatasetLabel label) {
  if (dir.empty()) return Dataset{label, {}};
  Dataset d = store::load_dataset(dir);
  if (d.label != label)
    throw Error(ErrorCode::kInvalidArgument, dir + " holds a " + to_string(d.label) + " dataset");
  return d;
}

std::string json_error(const std::string& code, const std::string& message) {
  nlohmann::json j;
  j["error"] = code;
  j["message"] = message;
  return j.dump();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"drclab: decaying relative correction lab"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  PlanFlags f;
  std::string out_dir = "out";
  std::string mode = "drc";
  std::string policy_path, dp_dir, dh_dir;
  int round = 0;
  int arms = 3;
  int episodes = 0;
  std::vector<std::string> variants{"orange_tomato", "green_tomato"};
  std::string bind, pacing = "fast", input_log;
  bool headless = false;
  std::vector<std::string> replay_paths;

  auto with_out = [&](CLI::App* sub) {
    sub->add_option("--out", out_dir, "output directory");
  };

  auto* demo = app.add_subcommand("demo", "collect pretraining demonstrations (D_P)");
  add_plan_flags(demo, f, true);
  with_out(demo);

  auto* pre = app.add_subcommand("pretrain", "train the initial policy on D_P");
  add_plan_flags(pre, f, true);
  with_out(pre);
  pre->add_option("--dp", dp_dir, "existing demonstration dataset directory")
      ->check(CLI::ExistingDirectory);

  auto* roll = app.add_subcommand("rollout", "evaluate a policy without supervision");
  add_plan_flags(roll, f, true);
  with_out(roll);
  roll->add_option("--policy", policy_path, "policy snapshot")->required()->check(CLI::ExistingFile);
  roll->add_option("--episodes", episodes, "episodes (default: plan eval trials)");

  auto* corr = app.add_subcommand("correct", "one supervised correction round");
  add_plan_flags(corr, f, true);
  with_out(corr);
  corr->add_option("--policy", policy_path, "policy snapshot")->required()->check(CLI::ExistingFile);
  corr->add_option("--mode", mode, "correction mode")->check(CLI::IsMember({"drc", "absolute"}));
  corr->add_option("--round", round, "round index (selects correction seeds)");

  auto* exp = app.add_subcommand("experiment", "pretrain, then correct/retrain/evaluate per round");
  add_plan_flags(exp, f, true);
  with_out(exp);
  exp->add_option("--mode", mode, "correction mode")->check(CLI::IsMember({"drc", "absolute"}));

  auto* cmp = app.add_subcommand("compare-corrections",
                                 "matched DRC and absolute pipelines, per-round intervention rates");
  add_plan_flags(cmp, f, true);
  with_out(cmp);

  auto* tr = app.add_subcommand("transfer", "adapt a trained policy to object variants");
  add_plan_flags(tr, f, true);
  with_out(tr);
  tr->add_option("--variants", variants, "variants to transfer to")->delimiter(',');
  tr->add_option("--policy", policy_path, "base policy (default: run the experiment first)")
      ->check(CLI::ExistingFile);
  tr->add_option("--dp", dp_dir, "D_P directory to pair with --policy")->check(CLI::ExistingDirectory);
  tr->add_option("--dh", dh_dir, "D_H directory to pair with --policy")->check(CLI::ExistingDirectory);

  auto* fl = app.add_subcommand("fleet", "one expert supervising several arms");
  add_plan_flags(fl, f, true);
  with_out(fl);
  fl->add_option("--arms", arms, "number of arms")->check(CLI::PositiveNumber);
  fl->add_option("--mode", mode, "correction mode")->check(CLI::IsMember({"drc", "absolute"}));

  auto* sv = app.add_subcommand("serve", "live session for operator clients");
  add_plan_flags(sv, f, true);
  with_out(sv);
  sv->add_option("--policy", policy_path, "policy snapshot (default: pretrain first)")
      ->check(CLI::ExistingFile);
  sv->add_option("--bind", bind, std::string("host:port (default $") + gateway::kBindEnv + " or " +
                                     gateway::kDefaultBind + ")");
  sv->add_option("--pacing", pacing, "fast, realtime or lockstep")
      ->check(CLI::IsMember({"fast", "realtime", "lockstep"}));
  sv->add_option("--arms", arms, "number of arms")->check(CLI::PositiveNumber);
  sv->add_option("--episodes", episodes, "episodes across all arms (default: corrections per round)");
  sv->add_option("--round", round, "round index (selects episode seeds)");
  sv->add_option("--input-log", input_log, "recorded input log to replay")->check(CLI::ExistingFile);
  sv->add_flag("--headless", headless, "no network; requires --input-log or runs autonomous");

  auto* rp = app.add_subcommand("replay", "re-score stored trajectories");
  rp->add_option("paths", replay_paths, "trajectory files or dataset directories")
      ->required()->check(CLI::ExistingPath);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json_error("usage", e.what()) << "\n";
    return 2;
  }

  try {
    const fs::path dir = out_dir;
    if (*rp) {
      bool all_match = true;
      out << "path\tstored_score\trescored_score\tmatch\n";
      for (const std::string& p : replay_paths) {
        std::vector<std::pair<std::string, Trajectory>> trajs;
        if (fs::is_directory(p)) {
          const store::Manifest m = store::load_manifest(p);
          const Dataset d = store::load_dataset(p);
          for (std::size_t i = 0; i < d.trajectories.size(); ++i)
            trajs.emplace_back((fs::path(p) / m.trajectories[i].file).string(), d.trajectories[i]);
        } else {
          trajs.emplace_back(p, store::load_trajectory(p));
        }
        for (const auto& [name, t] : trajs) {
          const EpisodeOutcome o = sim::score(t);
          const bool match = o == t.outcome;
          all_match = all_match && match;
          out << name << "\t" << fmt(t.outcome.score) << "\t" << fmt(o.score) << "\t"
              << (match ? "yes" : "no") << "\n";
        }
      }
      if (!all_match) {
        err << json_error("replay_mismatch", "rescored outcome differs from the stored one") << "\n";
        return 1;
      }
      return 0;
    }

    const loop::ExperimentPlan plan = build_plan(f);
    fs::create_directories(dir);
    write_plan(dir, plan);
    const auto corr_mode = oracle::correction_mode_from_string(mode);

    if (*demo) {
      const Dataset dp = loop::collect_demos(plan);
      store::save_dataset(dir / "dp", dp, plan.seed);
      finish_report(out, dir, plan.seed, {episodes_table("demos", dp.trajectories)});
    } else if (*pre) {
      Dataset dp;
      if (dp_dir.empty()) {
        dp = loop::collect_demos(plan);
        store::save_dataset(dir / "dp", dp, plan.seed);
      } else {
        dp = dataset_or_empty(dp_dir, DatasetLabel::kPretraining);
      }
      const PolicyParams params = loop::pretrain(plan, dp);
      store::save_policy(dir / "policy.bin", params);
      const double success =
          loop::evaluate(as_policy(params), plan.task, loop::evaluation_seeds(plan));
      finish_report(out, dir, plan.seed,
                    {Table{"pretrain", {"demos", "success_rate"},
                           {{fmt(static_cast<std::int64_t>(dp.trajectories.size())), fmt(success)}}}});
    } else if (*roll) {
      const PolicyParams params = store::load_policy(policy_path);
      std::vector<std::uint64_t> seeds = loop::evaluation_seeds(plan);
      if (episodes > 0) {
        loop::ExperimentPlan p = plan;
        p.eval_trials = episodes;
        seeds = loop::evaluation_seeds(p);
      }
      Dataset rolled{DatasetLabel::kHumanCorrected, {}};
      for (std::uint64_t s : seeds)
        rolled.trajectories.push_back(loop::run_episode(as_policy(params), plan.task, s, std::nullopt));
      store::save_dataset(dir / "rollout", rolled, plan.seed);
      double sum = 0;
      for (const auto& t : rolled.trajectories) sum += t.outcome.score;
      finish_report(out, dir, plan.seed,
                    {episodes_table("rollout", rolled.trajectories),
                     Table{"summary", {"episodes", "success_rate"},
                           {{fmt(static_cast<std::int64_t>(seeds.size())),
                             fmt(sum / static_cast<double>(seeds.size()))}}}});
    } else if (*corr) {
      const PolicyParams params = store::load_policy(policy_path);
      const loop::CorrectionRound cr =
          loop::run_correction_round(as_policy(params), plan, corr_mode, round);
      store::save_dataset(dir / "dh", Dataset{DatasetLabel::kHumanCorrected, cr.corrected},
                          plan.seed);
      finish_report(out, dir, plan.seed,
                    {episodes_table("corrected", cr.corrected),
                     Table{"summary", {"mode", "round", "episodes_run", "corrected",
                                       "mean_intervention_rate"},
                           {{mode, fmt(round), fmt(cr.episodes_run),
                             fmt(static_cast<std::int64_t>(cr.corrected.size())),
                             fmt(cr.mean_intervention_rate)}}}});
    } else if (*exp) {
      const loop::ExperimentResult res = loop::run_experiment(plan, corr_mode);
      store::save_dataset(dir / "dp", res.dp, plan.seed);
      store::save_dataset(dir / "dh", res.dh, plan.seed);
      for (std::size_t r = 0; r < res.snapshots.size(); ++r)
        store::save_policy(dir / ("policy-round-" + std::to_string(r) + ".bin"), res.snapshots[r]);
      Table t{"rounds", {"round", "success_rate", "intervention_rate", "corrected", "episodes_run"}, {}};
      for (const auto& row : res.rounds)
        t.rows.push_back({fmt(row.round), fmt(row.success_rate),
                          row.intervention_rate ? fmt(*row.intervention_rate) : "-",
                          fmt(row.corrected_trajectories), fmt(row.episodes_run)});
      finish_report(out, dir, plan.seed, {t});
    } else if (*cmp) {
      const auto rows = loop::compare_corrections(plan);
      Table t{"intervention_rates",
              {"round", "drc_rate", "absolute_rate", "drc_over_absolute", "drc_success",
               "absolute_success"},
              {}};
      for (const auto& r : rows)
        t.rows.push_back({fmt(r.round), fmt(r.drc_rate), fmt(r.absolute_rate),
                          r.absolute_rate > 0 ? fmt(r.drc_rate / r.absolute_rate) : "-",
                          fmt(r.drc_success), fmt(r.absolute_success)});
      finish_report(out, dir, plan.seed, {t});
    } else if (*tr) {
      PolicyParams base;
      Dataset dp, dh;
      if (!policy_path.empty()) {
        if (dp_dir.empty())
          throw Error(ErrorCode::kInvalidArgument, "--policy needs --dp (and usually --dh)");
        base = store::load_policy(policy_path);
        dp = dataset_or_empty(dp_dir, DatasetLabel::kPretraining);
        dh = dataset_or_empty(dh_dir, DatasetLabel::kHumanCorrected);
      } else {
        loop::ExperimentResult res = loop::run_experiment(plan, oracle::CorrectionMode::kDrc);
        base = res.snapshots.back();
        dp = std::move(res.dp);
        dh = std::move(res.dh);
        store::save_policy(dir / "policy-base.bin", base);
      }
      const loop::TransferResult res = loop::run_transfer(base, dp, dh, plan, variants);
      std::vector<std::string> cols{"policy"};
      cols.insert(cols.end(), res.variants.begin(), res.variants.end());
      Table m{"success", cols, {}};
      for (std::size_t i = 0; i < res.policies.size(); ++i) {
        std::vector<std::string> row{res.policies[i]};
        for (double v : res.success[i]) row.push_back(fmt(v));
        m.rows.push_back(row);
      }
      Table rates{"variant_corrections", {"variant", "mean_intervention_rate"}, {}};
      for (std::size_t k = 0; k < variants.size(); ++k) {
        rates.rows.push_back({variants[k], fmt(res.variant_intervention_rates[k])});
        store::save_policy(dir / ("policy-transfer-" + variants[k] + ".bin"), res.transferred[k]);
      }
      finish_report(out, dir, plan.seed, {m, rates});
    } else if (*fl) {
      const loop::FleetResult res = loop::run_fleet(arms, plan, corr_mode);
      Table rounds{"fleet_rounds",
                   {"round", "mean_intervention_rate", "expert_utilization", "ticks",
                    "attended_ticks", "mean_wait", "max_wait", "waits", "success_after"},
                   {}};
      Table per_arm{"arms", {"round", "arm", "intervention_rate", "corrected", "episodes"}, {}};
      Table attention{"attention", {"round", "tick", "arm", "event"}, {}};
      Table inputs{"inputs", {"round", "tick", "arms"}, {}};
      Dataset dh{DatasetLabel::kHumanCorrected, {}};
      for (const auto& r : res.rounds) {
        rounds.rows.push_back({fmt(r.round), fmt(r.mean_intervention_rate),
                               fmt(r.expert_utilization), fmt(r.ticks), fmt(r.attended_ticks),
                               fmt(r.mean_wait), fmt(r.max_wait), fmt(r.waits),
                               fmt(r.success_rate_after)});
        for (std::size_t a = 0; a < r.arm_intervention_rates.size(); ++a)
          per_arm.rows.push_back({fmt(r.round), fmt(static_cast<std::int64_t>(a)),
                                  fmt(r.arm_intervention_rates[a]), fmt(r.arm_corrected[a]),
                                  fmt(r.arm_episodes[a])});
        for (const auto& e : r.attention_log)
          attention.rows.push_back({fmt(r.round), fmt(e.tick), fmt(e.arm), loop::to_string(e.kind)});
        for (std::size_t t = 0; t < r.inputs_per_tick.size(); ++t) {
          std::string served;
          for (int a : r.inputs_per_tick[t]) served += (served.empty() ? "" : ",") + std::to_string(a);
          inputs.rows.push_back({fmt(r.round), fmt(static_cast<std::int64_t>(t)),
                                 served.empty() ? "-" : served});
        }
        dh.trajectories.insert(dh.trajectories.end(), r.corrected.begin(), r.corrected.end());
      }
      store::save_dataset(dir / "dh", dh, plan.seed);
      store::save_report(dir / "attention.tsv", plan.seed, {attention, inputs});
      Table summary{"pretrained", {"success_rate"}, {{fmt(res.pretrained_success)}}};
      finish_report(out, dir, plan.seed, {summary, rounds, per_arm});
    } else if (*sv) {
      const PolicyParams params = policy_or_pretrain(policy_path, plan);
      gateway::SessionConfig scfg;
      scfg.arms = arms;
      scfg.episodes = episodes > 0 ? episodes : plan.corrections_per_round;
      scfg.round = static_cast<std::uint64_t>(round);
      std::vector<Trajectory> trajs;
      Dataset dh;
      std::vector<gateway::LoggedInput> log;
      std::vector<std::int64_t> superseded;
      if (headless) {
        gateway::SessionCore core(as_policy(params), plan, scfg);
        if (!input_log.empty())
          log = gateway::parse_input_log(store::read_file(input_log));
        gateway::replay(core, log);
        trajs = core.trajectories();
        dh = core.corrected();
        log = core.input_log();
        for (int a = 0; a < arms; ++a) superseded.push_back(core.superseded(a));
      } else {
        if (!input_log.empty())
          throw Error(ErrorCode::kInvalidArgument,
                      "--input-log replays headless; add --headless or use a scripted client");
        gateway::ServeOptions opts;
        opts.bind = bind.empty() ? gateway::default_bind() : net::parse_endpoint(bind);
        opts.pacing = gateway::pacing_from_string(pacing);
        opts.on_listening = [&](int port) {
          out << "listening\t" << opts.bind.host << ":" << port << std::endl;
        };
        gateway::ServeResult res = gateway::serve(as_policy(params), plan, scfg, opts);
        trajs = std::move(res.trajectories);
        dh = std::move(res.corrected);
        log = std::move(res.input_log);
        superseded = std::move(res.superseded);
      }
      store::save_dataset(dir / "episodes", Dataset{DatasetLabel::kHumanCorrected, trajs}, plan.seed);
      store::save_dataset(dir / "dh", dh, plan.seed);
      store::write_file(dir / "input-log.txt", gateway::render_input_log(log));
      Table sup{"superseded", {"arm", "superseded_inputs"}, {}};
      for (std::size_t a = 0; a < superseded.size(); ++a)
        sup.rows.push_back({fmt(static_cast<std::int64_t>(a)), fmt(superseded[a])});
      finish_report(out, dir, plan.seed, {episodes_table("episodes", trajs), sup});
    }
    return 0;
  } catch (const Error& e) {
    err << json_error(to_string(e.code()), e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << json_error("internal", e.what()) << "\n";
    return 1;
  }
}

}  // namespace drc
