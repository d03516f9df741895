#pragma once

// Messages exchanged between a live session and operator clients.
//
// A record is "<byte length>\n<body>". The body is tab-separated:
//
//   <kind> <seq> <arm> <payload...>
//
// Numbers follow the datastore rules (shortest exact decimal). `seq` is a
// per-arm counter that strictly increases in each direction of a connection.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "drclab/correction.hpp"
#include "drclab/domain.hpp"

namespace drc::wire {

enum class Kind {
  kStateUpdate,
  kMetricsUpdate,
  kPedalEvent,
  kCorrectionInput,
  kArmSelect,
  kEpisodeEnd,
  kPlanStatus,
  // Client asks a lockstep session for one more operator tick.
  kAdvance,
  // Connection-scoped complaint about a client message.
  kError,
};

const char* to_string(Kind kind);
Kind kind_from_string(const std::string& s);

struct StateUpdate {
  std::int64_t tick = 0;           // policy tick about to run
  std::int64_t operator_tick = 0;
  Pose7 gripper_pose;
  Vec3 target_sighting{};
  Vec6 offset{};                   // offset in force on the last policy tick
  ControlMode mode = ControlMode::kAutonomous;
  TaskPhase phase = TaskPhase::kNone;
  std::int64_t episode = 0;
};

struct MetricsUpdate {
  std::int64_t episodes_done = 0;
  std::int64_t corrected = 0;
  std::int64_t interventions = 0;  // this episode so far
  double intervention_rate = 0.0;  // mean over corrected episodes
  std::int64_t superseded = 0;     // inputs overwritten before their tick
};

struct PedalMsg {
  PedalKind pedal = PedalKind::kRelease;
};

struct CorrectionMsg {
  Vec6 vector{};
  std::optional<double> gripper;
};

struct EpisodeEndMsg {
  std::int64_t episode = 0;
  std::uint64_t seed = 0;
  EpisodeOutcome outcome;
};

struct PlanStatusMsg {
  std::string status;  // "running", "finished"
  std::int64_t arms = 0;
  std::int64_t episodes = 0;
  double decay_rate = 0.0;
};

struct Message {
  Kind kind = Kind::kError;
  std::uint64_t seq = 0;
  std::int64_t arm = 0;
  StateUpdate state;
  MetricsUpdate metrics;
  PedalMsg pedal;
  CorrectionMsg correction;
  EpisodeEndMsg episode_end;
  PlanStatusMsg plan;
  std::string error;
};

std::string encode_body(const Message& m);
Message decode_body(std::string_view body);

// Framed form: length prefix plus body.
std::string encode(const Message& m);

// Splits a byte stream into records. Leftover partial data stays buffered.
class Decoder {
 public:
  void feed(std::string_view bytes);
  std::optional<Message> next();

 private:
  std::string buf_;
};

// Checks strictly increasing sequence numbers per arm.
class SequenceGuard {
 public:
  bool accept(std::int64_t arm, std::uint64_t seq);

 private:
  std::vector<std::pair<std::int64_t, std::uint64_t>> last_;
};

// Hands out per-arm sequence numbers.
class SequenceCounter {
 public:
  std::uint64_t next(std::int64_t arm);

 private:
  std::vector<std::pair<std::int64_t, std::uint64_t>> next_;
};

}  // namespace drc::wire
