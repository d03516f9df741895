#pragma once

// Runs a SessionCore behind a WebSocket endpoint.
//
// Network readers only decode and post to the owner's inbox; the owner is
// the single writer of session state and sends every outgoing record.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "drclab/session.hpp"
#include "drclab/ws.hpp"

namespace drc::gateway {

enum class Pacing {
  kFast,      // as fast as possible
  kRealtime,  // one operator tick per 1/operator_rate seconds
  kLockstep,  // one operator tick per Advance message from a client
};

Pacing pacing_from_string(const std::string& s);

// Environment variable holding the default bind address.
inline constexpr const char* kBindEnv = "DRCLAB_BIND";
inline constexpr const char* kDefaultBind = "127.0.0.1:8765";
net::Endpoint default_bind();

struct ServeOptions {
  net::Endpoint bind;
  Pacing pacing = Pacing::kFast;
  // Called once the socket listens (with the actual port).
  std::function<void(int)> on_listening;
};

struct ServeResult {
  std::vector<Trajectory> trajectories;
  Dataset corrected;
  std::vector<LoggedInput> input_log;
  std::vector<std::int64_t> superseded;  // per arm
};

ServeResult serve(std::shared_ptr<const policy::Policy> policy,
                  const loop::ExperimentPlan& plan, const SessionConfig& cfg,
                  const ServeOptions& options);

// Lockstep client that plays back one client's share of an input log: for
// each operator tick it sends that tick's messages, then Advance, then waits
// for the tick's state. Returns every message received.
std::vector<wire::Message> run_scripted_client(const net::Endpoint& endpoint,
                                               const std::vector<LoggedInput>& log);

}  // namespace drc::gateway
