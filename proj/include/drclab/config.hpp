#pragma once

// Experiment plans as JSON. Unknown keys are rejected so a typo in a config
// file cannot silently fall back to a default.

#include <string>

#include <json.hpp>

#include "drclab/loop.hpp"

namespace drc::config {

nlohmann::ordered_json to_json(const TaskSpec& task);
nlohmann::ordered_json to_json(const loop::ExperimentPlan& plan);

// Starts from `base` and overrides whatever keys are present.
TaskSpec task_from_json(const nlohmann::json& j, TaskSpec base);
loop::ExperimentPlan plan_from_json(const nlohmann::json& j, loop::ExperimentPlan base);

std::string render_plan(const loop::ExperimentPlan& plan);
loop::ExperimentPlan parse_plan(const std::string& text, loop::ExperimentPlan base);

}  // namespace drc::config
