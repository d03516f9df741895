#pragma once

// Live supervision session, free of any networking.
//
// Time advances in operator ticks. Policy ticks happen on policy_rate of
// every operator_rate operator ticks (5 of 12 by default). Client input is
// latched per arm and consumed at the next policy tick: pedal events in
// arrival order, and only the latest correction (earlier ones are counted as
// superseded). StateUpdate goes out for every running arm on every operator
// tick.
//
// A client may steer only the arm it selected with ArmSelect.

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drclab/loop.hpp"
#include "drclab/wire.hpp"

namespace drc::gateway {

using ClientId = int;

struct SessionConfig {
  int arms = 1;
  int episodes = 1;  // total across arms
  int operator_rate = 12;
  int policy_rate = 5;
  std::uint64_t round = 0;  // correction seed stream index
};

ValidationReport validate(const SessionConfig& cfg);

struct Outgoing {
  std::optional<ClientId> to;  // empty: every client
  wire::Message message;
};

struct LoggedInput {
  std::int64_t operator_tick = 0;
  ClientId client = 0;
  wire::Message message;
};

// Log lines: "<operator tick>\t<client>\t<message body>".
std::string render_input_log(const std::vector<LoggedInput>& log);
std::vector<LoggedInput> parse_input_log(std::string_view text);

class SessionCore {
 public:
  SessionCore(std::shared_ptr<const policy::Policy> policy,
              loop::ExperimentPlan plan, SessionConfig cfg);

  void connect(ClientId client);
  void disconnect(ClientId client);

  // Handles one client message. Anything rejected produces an error reply
  // to that client only; the session carries on.
  void submit(ClientId client, const wire::Message& message);
  // Error reply for input that did not even decode.
  void reject(ClientId client, const std::string& what);

  // One operator tick. No-op once finished.
  void step();

  bool finished() const { return finished_; }
  std::int64_t operator_tick() const { return operator_tick_; }
  std::int64_t policy_ticks() const { return policy_ticks_; }
  bool policy_tick_due() const;

  std::vector<Outgoing> drain();

  // Completed episodes in completion order.
  const std::vector<Trajectory>& trajectories() const { return done_; }
  Dataset corrected() const;
  const std::vector<LoggedInput>& input_log() const { return log_; }
  std::int64_t superseded(int arm) const;
  std::optional<int> selected_arm(ClientId client) const;

 private:
  struct Arm {
    std::optional<loop::EpisodeRunner> runner;
    std::int64_t episode = -1;
    std::uint64_t seed = 0;
    std::vector<PedalKind> pedals;
    std::optional<wire::CorrectionMsg> latched;
    std::int64_t superseded = 0;
    std::int64_t interventions = 0;
    std::int64_t episodes_done = 0;
    std::int64_t corrected = 0;
    double rate_sum = 0.0;
    Vec6 shown_offset{};
  };
  struct Client {
    ClientId id = 0;
    std::optional<int> selected;
    wire::SequenceGuard guard;
  };

  Client* find(ClientId id);
  void reply_error(ClientId client, std::int64_t arm, const std::string& what);
  void emit(std::optional<ClientId> to, wire::Message m);
  void start_episodes();
  void policy_tick();
  wire::Message state_update(int arm) const;
  wire::Message metrics_update(int arm) const;
  wire::Message plan_status(const std::string& status) const;

  std::shared_ptr<const policy::Policy> policy_;
  loop::ExperimentPlan plan_;
  SessionConfig cfg_;
  std::vector<Arm> arms_;
  std::vector<Client> clients_;
  std::vector<Outgoing> out_;
  std::vector<Trajectory> done_;
  std::vector<LoggedInput> log_;
  wire::SequenceCounter seq_;
  std::int64_t operator_tick_ = 0;
  std::int64_t policy_ticks_ = 0;
  int started_ = 0;
  bool finished_ = false;
};

// Feeds a recorded input log into a fresh session and runs it to the end.
void replay(SessionCore& core, const std::vector<LoggedInput>& log);

}  // namespace drc::gateway
