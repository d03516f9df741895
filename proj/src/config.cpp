#include "drclab/config.hpp"

#include <set>

namespace drc::config {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <std::size_t N>
std::array<double, N> arr(const json& j, const char* key) {
  if (!j.is_array() || j.size() != N)
    throw Error(ErrorCode::kInvalidArgument,
                std::string(key) + " must be an array of " + std::to_string(N) + " numbers");
  std::array<double, N> v{};
  for (std::size_t i = 0; i < N; ++i) v[i] = j[i].get<double>();
  return v;
}

void only_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object())
    throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k))
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("unknown ") + what + " key '" + k + "'");
}

ordered_json to_json(const oracle::OracleConfig& c) {
  ordered_json j;
  j["trigger_distance"] = c.trigger_distance;
  j["trigger_patience"] = c.trigger_patience;
  j["release_distance"] = c.release_distance;
  j["correction_gain"] = c.correction_gain;
  j["gripper_trigger"] = c.gripper_trigger;
  j["mode"] = oracle::to_string(c.mode);
  return j;
}

ordered_json to_json(const policy::TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["horizon"] = c.horizon;
  j["execute_steps"] = c.execute_steps;
  j["optimizer"] = c.optimizer == policy::Optimizer::kAdam ? "adam" : "sgd";
  j["cosine_decay"] = c.cosine_decay;
  j["eval_batch_size"] = c.eval_batch_size;
  return j;
}

oracle::OracleConfig oracle_from_json(const json& j, oracle::OracleConfig c) {
  only_keys(j,
            {"trigger_distance", "trigger_patience", "release_distance", "correction_gain",
             "gripper_trigger", "mode"},
            "oracle");
  if (j.contains("trigger_distance")) c.trigger_distance = j["trigger_distance"].get<double>();
  if (j.contains("trigger_patience")) c.trigger_patience = j["trigger_patience"].get<int>();
  if (j.contains("release_distance")) c.release_distance = j["release_distance"].get<double>();
  if (j.contains("correction_gain")) c.correction_gain = j["correction_gain"].get<double>();
  if (j.contains("gripper_trigger")) c.gripper_trigger = j["gripper_trigger"].get<double>();
  if (j.contains("mode"))
    c.mode = oracle::correction_mode_from_string(j["mode"].get<std::string>());
  return c;
}

policy::TrainConfig train_from_json(const json& j, policy::TrainConfig c) {
  only_keys(j,
            {"epochs", "batch_size", "learning_rate", "seed", "horizon", "execute_steps",
             "optimizer", "cosine_decay", "eval_batch_size"},
            "train");
  if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("horizon")) c.horizon = j["horizon"].get<int>();
  if (j.contains("execute_steps")) c.execute_steps = j["execute_steps"].get<int>();
  if (j.contains("optimizer")) {
    const auto s = j["optimizer"].get<std::string>();
    if (s == "adam")
      c.optimizer = policy::Optimizer::kAdam;
    else if (s == "sgd")
      c.optimizer = policy::Optimizer::kSgd;
    else
      throw Error(ErrorCode::kInvalidArgument, "unknown optimizer '" + s + "'");
  }
  if (j.contains("cosine_decay")) c.cosine_decay = j["cosine_decay"].get<bool>();
  if (j.contains("eval_batch_size")) c.eval_batch_size = j["eval_batch_size"].get<int>();
  return c;
}

}  // namespace

ordered_json to_json(const TaskSpec& t) {
  ordered_json j;
  j["family"] = to_string(t.family);
  j["region_lo"] = t.target_region.lo;
  j["region_hi"] = t.target_region.hi;
  j["variant"] = t.object_variant;
  j["grasp_tolerance"] = t.grasp_tolerance;
  j["stain_radius_range"] = {t.stain_radius_range.first, t.stain_radius_range.second};
  j["actuation_bias"] = t.actuation_bias;
  j["sensing_noise_std"] = t.sensing_noise_std;
  return j;
}

TaskSpec task_from_json(const json& j, TaskSpec t) {
  only_keys(j,
            {"family", "region_lo", "region_hi", "variant", "grasp_tolerance",
             "stain_radius_range", "actuation_bias", "sensing_noise_std"},
            "task");
  if (j.contains("family")) t.family = task_family_from_string(j["family"].get<std::string>());
  if (j.contains("region_lo")) t.target_region.lo = arr<3>(j["region_lo"], "region_lo");
  if (j.contains("region_hi")) t.target_region.hi = arr<3>(j["region_hi"], "region_hi");
  if (j.contains("variant")) t.object_variant = j["variant"].get<std::string>();
  if (j.contains("grasp_tolerance")) t.grasp_tolerance = j["grasp_tolerance"].get<double>();
  if (j.contains("stain_radius_range")) {
    const auto r = arr<2>(j["stain_radius_range"], "stain_radius_range");
    t.stain_radius_range = {r[0], r[1]};
  }
  if (j.contains("actuation_bias"))
    t.actuation_bias = arr<3>(j["actuation_bias"], "actuation_bias");
  if (j.contains("sensing_noise_std"))
    t.sensing_noise_std = j["sensing_noise_std"].get<double>();
  return t;
}

ordered_json to_json(const loop::ExperimentPlan& p) {
  ordered_json j;
  j["seed"] = p.seed;
  j["task"] = to_json(p.task);
  j["n_demos"] = p.n_demos;
  j["rounds"] = p.rounds;
  j["corrections_per_round"] = p.corrections_per_round;
  j["eval_trials"] = p.eval_trials;
  j["oracle"] = to_json(p.oracle);
  j["train"] = to_json(p.train);
  j["update_epochs"] = p.update_epochs;
  j["update_learning_rate"] = p.update_learning_rate;
  j["hidden_widths"] = p.hidden_widths;
  j["decay_rate"] = p.decay_rate;
  j["demo_region_scale"] = p.demo_region_scale;
  return j;
}

loop::ExperimentPlan plan_from_json(const json& j, loop::ExperimentPlan p) {
  only_keys(j,
            {"seed", "task", "n_demos", "rounds", "corrections_per_round", "eval_trials",
             "oracle", "train", "update_epochs", "update_learning_rate", "hidden_widths",
             "decay_rate", "demo_region_scale"},
            "plan");
  try {
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("task")) p.task = task_from_json(j["task"], p.task);
    if (j.contains("n_demos")) p.n_demos = j["n_demos"].get<int>();
    if (j.contains("rounds")) p.rounds = j["rounds"].get<int>();
    if (j.contains("corrections_per_round"))
      p.corrections_per_round = j["corrections_per_round"].get<int>();
    if (j.contains("eval_trials")) p.eval_trials = j["eval_trials"].get<int>();
    if (j.contains("oracle")) p.oracle = oracle_from_json(j["oracle"], p.oracle);
    if (j.contains("train")) p.train = train_from_json(j["train"], p.train);
    if (j.contains("update_epochs")) p.update_epochs = j["update_epochs"].get<int>();
    if (j.contains("update_learning_rate"))
      p.update_learning_rate = j["update_learning_rate"].get<double>();
    if (j.contains("hidden_widths")) p.hidden_widths = j["hidden_widths"].get<std::vector<int>>();
    if (j.contains("decay_rate")) p.decay_rate = j["decay_rate"].get<double>();
    if (j.contains("demo_region_scale"))
      p.demo_region_scale = j["demo_region_scale"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("plan: ") + e.what());
  }
  return p;
}

std::string render_plan(const loop::ExperimentPlan& plan) {
  return to_json(plan).dump(2) + "\n";
}

loop::ExperimentPlan parse_plan(const std::string& text, loop::ExperimentPlan base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("plan JSON: ") + e.what());
  }
  return plan_from_json(j, std::move(base));
}

}  // namespace drc::config
