#include "drclab/session.hpp"

#include <algorithm>

#include "drclab/store.hpp"

namespace drc::gateway {

ValidationReport validate(const SessionConfig& cfg) {
  ValidationReport r;
  if (cfg.arms < 1) r.push_back("arms >= 1");
  if (cfg.episodes < 1) r.push_back("episodes >= 1");
  if (cfg.operator_rate < 1 || cfg.policy_rate < 1 || cfg.policy_rate > cfg.operator_rate)
    r.push_back("1 <= policy_rate <= operator_rate");
  return r;
}

std::string render_input_log(const std::vector<LoggedInput>& log) {
  std::string s;
  for (const auto& e : log)
    s += std::to_string(e.operator_tick) + "\t" + std::to_string(e.client) + "\t" +
         wire::encode_body(e.message) + "\n";
  return s;
}

std::vector<LoggedInput> parse_input_log(std::string_view text) {
  std::vector<LoggedInput> out;
  std::size_t line_no = 0;
  for (const std::string& line : store::split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const std::size_t a = line.find('\t');
      const std::size_t b = a == std::string::npos ? a : line.find('\t', a + 1);
      if (b == std::string::npos) throw Error(ErrorCode::kFormat, "expected tick and client");
      LoggedInput e;
      e.operator_tick = store::parse_int(std::string_view(line).substr(0, a));
      e.client = static_cast<ClientId>(
          store::parse_int(std::string_view(line).substr(a + 1, b - a - 1)));
      e.message = wire::decode_body(std::string_view(line).substr(b + 1));
      if (!out.empty() && e.operator_tick < out.back().operator_tick)
        throw Error(ErrorCode::kFormat, "operator ticks go backwards");
      out.push_back(std::move(e));
    } catch (const Error& err) {
      throw Error(ErrorCode::kFormat,
                  "input log line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return out;
}

SessionCore::SessionCore(std::shared_ptr<const policy::Policy> policy,
                         loop::ExperimentPlan plan, SessionConfig cfg)
    : policy_(std::move(policy)), plan_(std::move(plan)), cfg_(cfg) {
  ValidationReport r = validate(cfg_);
  const ValidationReport pr = loop::validate(plan_);
  r.insert(r.end(), pr.begin(), pr.end());
  if (!r.empty()) throw Error(ErrorCode::kInvalidArgument, "invalid session: " + r.front());
  if (!policy_) throw Error(ErrorCode::kInvalidArgument, "null policy");
  arms_.resize(static_cast<std::size_t>(cfg_.arms));
  start_episodes();
}

SessionCore::Client* SessionCore::find(ClientId id) {
  for (auto& c : clients_)
    if (c.id == id) return &c;
  return nullptr;
}

void SessionCore::connect(ClientId client) {
  if (find(client)) return;
  clients_.push_back(Client{client, std::nullopt, {}});
  emit(client, plan_status(finished_ ? "finished" : "running"));
}

void SessionCore::disconnect(ClientId client) {
  clients_.erase(std::remove_if(clients_.begin(), clients_.end(),
                                [client](const Client& c) { return c.id == client; }),
                 clients_.end());
}

void SessionCore::emit(std::optional<ClientId> to, wire::Message m) {
  m.seq = seq_.next(m.arm);
  out_.push_back(Outgoing{to, std::move(m)});
}

void SessionCore::reply_error(ClientId client, std::int64_t arm, const std::string& what) {
  wire::Message m;
  m.kind = wire::Kind::kError;
  m.arm = arm;
  m.error = what;
  emit(client, std::move(m));
}

void SessionCore::reject(ClientId client, const std::string& what) {
  if (!find(client)) connect(client);
  reply_error(client, 0, what);
}

void SessionCore::submit(ClientId client, const wire::Message& msg) {
  if (msg.kind != wire::Kind::kAdvance) log_.push_back({operator_tick_, client, msg});
  Client* c = find(client);
  if (!c) {
    connect(client);
    c = find(client);
  }
  if (msg.kind == wire::Kind::kAdvance) return;
  if (!c->guard.accept(msg.arm, msg.seq)) {
    reply_error(client, msg.arm, "sequence number " + std::to_string(msg.seq) +
                                     " not above the last one for arm " +
                                     std::to_string(msg.arm));
    return;
  }
  const bool arm_ok = msg.arm >= 0 && msg.arm < cfg_.arms;
  switch (msg.kind) {
    case wire::Kind::kArmSelect:
      if (!arm_ok) {
        reply_error(client, msg.arm, "no arm " + std::to_string(msg.arm));
        return;
      }
      c->selected = static_cast<int>(msg.arm);
      return;
    case wire::Kind::kPedalEvent:
    case wire::Kind::kCorrectionInput: {
      if (!arm_ok || c->selected != static_cast<int>(msg.arm)) {
        reply_error(client, msg.arm,
                    "arm " + std::to_string(msg.arm) + " is not selected by this client");
        return;
      }
      if (finished_) {
        reply_error(client, msg.arm, "session finished");
        return;
      }
      Arm& arm = arms_[static_cast<std::size_t>(msg.arm)];
      if (msg.kind == wire::Kind::kPedalEvent) {
        arm.pedals.push_back(msg.pedal.pedal);
      } else {
        if (!all_finite(msg.correction.vector)) {
          reply_error(client, msg.arm, "non-finite correction");
          return;
        }
        if (arm.latched) ++arm.superseded;
        arm.latched = msg.correction;
      }
      return;
    }
    default:
      reply_error(client, msg.arm,
                  std::string("clients may not send ") + wire::to_string(msg.kind));
      return;
  }
}

bool SessionCore::policy_tick_due() const {
  const std::int64_t k = operator_tick_;
  return (k + 1) * cfg_.policy_rate / cfg_.operator_rate >
         k * cfg_.policy_rate / cfg_.operator_rate;
}

void SessionCore::start_episodes() {
  for (std::size_t a = 0; a < arms_.size(); ++a) {
    Arm& arm = arms_[a];
    if (arm.runner || started_ >= cfg_.episodes) continue;
    arm.seed = loop::stream_seed(plan_, loop::SeedStream::kCorrection, cfg_.round,
                                 static_cast<std::uint64_t>(started_));
    arm.runner.emplace(policy_, plan_.task, arm.seed, plan_.decay_rate);
    arm.episode = started_;
    arm.interventions = 0;
    arm.shown_offset = {};
    ++started_;
  }
}

void SessionCore::policy_tick() {
  for (std::size_t a = 0; a < arms_.size(); ++a) {
    Arm& arm = arms_[a];
    if (!arm.runner) {
      arm.pedals.clear();
      arm.latched.reset();
      continue;
    }
    loop::EpisodeRunner& run = *arm.runner;
    for (PedalKind p : arm.pedals) run.pedal(p);
    arm.pedals.clear();
    loop::ExpertInput in;
    if (arm.latched) {
      const wire::CorrectionMsg& cm = *arm.latched;
      if (run.correction().mode == ControlMode::kAbsoluteOverride) {
        in.kind = loop::ExpertInput::Kind::kAbsolute;
        in.pose = Pose7::from6(cm.vector, cm.gripper.value_or(run.policy_action().gripper));
      } else {
        in.kind = loop::ExpertInput::Kind::kDrc;
        in.vector = cm.vector;
        in.gripper = cm.gripper;
      }
      arm.latched.reset();
      ++arm.interventions;
    }
    run.advance(in);
    arm.shown_offset = run.correction().mode == ControlMode::kAbsoluteOverride
                           ? Vec6{}
                           : live_offset(run.correction(), run.tick() - 1);
    if (run.done()) {
      Trajectory t = run.finish();
      ++arm.episodes_done;
      if (std::any_of(t.steps.begin(), t.steps.end(),
                      [](const StepRecord& s) { return s.intervention_flag; })) {
        ++arm.corrected;
        arm.rate_sum += t.outcome.intervention_rate;
      }
      wire::Message end;
      end.kind = wire::Kind::kEpisodeEnd;
      end.arm = static_cast<std::int64_t>(a);
      end.episode_end = {arm.episode, arm.seed, t.outcome};
      emit(std::nullopt, std::move(end));
      done_.push_back(std::move(t));
      arm.runner.reset();
    }
  }
  start_episodes();
  for (std::size_t a = 0; a < arms_.size(); ++a)
    emit(std::nullopt, metrics_update(static_cast<int>(a)));
  ++policy_ticks_;
}

void SessionCore::step() {
  if (finished_) return;
  if (policy_tick_due()) policy_tick();
  for (std::size_t a = 0; a < arms_.size(); ++a)
    if (arms_[a].runner) emit(std::nullopt, state_update(static_cast<int>(a)));
  ++operator_tick_;
  if (std::none_of(arms_.begin(), arms_.end(),
                   [](const Arm& a) { return a.runner.has_value(); })) {
    finished_ = true;
    emit(std::nullopt, plan_status("finished"));
  }
}

std::vector<Outgoing> SessionCore::drain() {
  std::vector<Outgoing> out;
  out.swap(out_);
  return out;
}

Dataset SessionCore::corrected() const {
  Dataset d{DatasetLabel::kHumanCorrected, {}};
  for (const auto& t : done_)
    if (std::any_of(t.steps.begin(), t.steps.end(),
                    [](const StepRecord& s) { return s.intervention_flag; }))
      d.trajectories.push_back(t);
  return d;
}

std::int64_t SessionCore::superseded(int arm) const {
  return arms_.at(static_cast<std::size_t>(arm)).superseded;
}

std::optional<int> SessionCore::selected_arm(ClientId client) const {
  for (const auto& c : clients_)
    if (c.id == client) return c.selected;
  return std::nullopt;
}

wire::Message SessionCore::state_update(int a) const {
  const Arm& arm = arms_[static_cast<std::size_t>(a)];
  const sim::SimState& s = arm.runner->state();
  wire::Message m;
  m.kind = wire::Kind::kStateUpdate;
  m.arm = a;
  m.state.tick = s.tick;
  m.state.operator_tick = operator_tick_;
  m.state.episode = arm.episode;
  m.state.gripper_pose = s.gripper_pose;
  m.state.target_sighting = sim::observe(s).target_sighting;
  m.state.offset = arm.shown_offset;
  m.state.mode = arm.runner->correction().mode;
  m.state.phase = s.phase;
  return m;
}

wire::Message SessionCore::metrics_update(int a) const {
  const Arm& arm = arms_[static_cast<std::size_t>(a)];
  wire::Message m;
  m.kind = wire::Kind::kMetricsUpdate;
  m.arm = a;
  m.metrics.episodes_done = arm.episodes_done;
  m.metrics.corrected = arm.corrected;
  m.metrics.interventions = arm.interventions;
  m.metrics.intervention_rate =
      arm.corrected > 0 ? arm.rate_sum / static_cast<double>(arm.corrected) : 0.0;
  m.metrics.superseded = arm.superseded;
  return m;
}

wire::Message SessionCore::plan_status(const std::string& status) const {
  wire::Message m;
  m.kind = wire::Kind::kPlanStatus;
  m.plan.status = status;
  m.plan.arms = cfg_.arms;
  m.plan.episodes = cfg_.episodes;
  m.plan.decay_rate = plan_.decay_rate;
  return m;
}

void replay(SessionCore& core, const std::vector<LoggedInput>& log) {
  std::size_t i = 0;
  while (!core.finished()) {
    for (; i < log.size() && log[i].operator_tick <= core.operator_tick(); ++i)
      core.submit(log[i].client, log[i].message);
    core.step();
    core.drain();
  }
}

}  // namespace drc::gateway
