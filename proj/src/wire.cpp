#include "drclab/wire.hpp"

#include <algorithm>

#include "drclab/store.hpp"

namespace drc::wire {

using store::format_double;
using store::parse_double;
using store::parse_int;
using store::parse_uint;

namespace {

constexpr std::size_t kMaxRecord = 1 << 20;

struct KindName {
  Kind kind;
  const char* name;
};

constexpr KindName kNames[] = {
    {Kind::kStateUpdate, "state"},      {Kind::kMetricsUpdate, "metrics"},
    {Kind::kPedalEvent, "pedal"},       {Kind::kCorrectionInput, "correction"},
    {Kind::kArmSelect, "arm-select"},   {Kind::kEpisodeEnd, "episode-end"},
    {Kind::kPlanStatus, "plan-status"}, {Kind::kAdvance, "advance"},
    {Kind::kError, "error"},
};

void num(std::string& s, double v) {
  s += '\t';
  s += format_double(v);
}
void num(std::string& s, std::int64_t v) {
  s += '\t';
  s += std::to_string(v);
}
template <std::size_t N>
void vec(std::string& s, const std::array<double, N>& v) {
  for (double x : v) num(s, x);
}

class Cursor {
 public:
  explicit Cursor(std::vector<std::string> f) : f_(std::move(f)) {}
  const std::string& next() {
    if (i_ >= f_.size()) throw Error(ErrorCode::kFormat, "message has too few fields");
    return f_[i_++];
  }
  double real() { return parse_double(next()); }
  std::int64_t integer() { return parse_int(next()); }
  template <std::size_t N>
  std::array<double, N> vec() {
    std::array<double, N> v{};
    for (auto& x : v) x = real();
    return v;
  }
  void finish() const {
    if (i_ != f_.size()) throw Error(ErrorCode::kFormat, "message has too many fields");
  }

 private:
  std::vector<std::string> f_;
  std::size_t i_ = 0;
};

}  // namespace

const char* to_string(Kind kind) {
  for (const auto& k : kNames)
    if (k.kind == kind) return k.name;
  return "?";
}

Kind kind_from_string(const std::string& s) {
  for (const auto& k : kNames)
    if (s == k.name) return k.kind;
  throw Error(ErrorCode::kFormat, "unknown message kind '" + s + "'");
}

std::string encode_body(const Message& m) {
  std::string s = to_string(m.kind);
  s += '\t' + std::to_string(m.seq);
  num(s, m.arm);
  switch (m.kind) {
    case Kind::kStateUpdate: {
      const StateUpdate& u = m.state;
      num(s, u.tick);
      num(s, u.operator_tick);
      num(s, u.episode);
      s += '\t' + store::encode_pose(u.gripper_pose);
      vec(s, u.target_sighting);
      vec(s, u.offset);
      s += '\t';
      s += drc::to_string(u.mode);
      s += '\t';
      s += drc::to_string(u.phase);
      break;
    }
    case Kind::kMetricsUpdate: {
      const MetricsUpdate& u = m.metrics;
      num(s, u.episodes_done);
      num(s, u.corrected);
      num(s, u.interventions);
      num(s, u.intervention_rate);
      num(s, u.superseded);
      break;
    }
    case Kind::kPedalEvent:
      s += '\t';
      s += drc::to_string(m.pedal.pedal);
      break;
    case Kind::kCorrectionInput:
      vec(s, m.correction.vector);
      if (m.correction.gripper)
        num(s, *m.correction.gripper);
      else
        s += "\t-";
      break;
    case Kind::kArmSelect:
    case Kind::kAdvance:
      break;
    case Kind::kEpisodeEnd: {
      const EpisodeEndMsg& e = m.episode_end;
      num(s, e.episode);
      s += '\t' + std::to_string(e.seed);
      num(s, e.outcome.score);
      s += '\t';
      s += drc::to_string(e.outcome.phase_reached);
      num(s, e.outcome.ticks_used);
      num(s, e.outcome.intervention_rate);
      break;
    }
    case Kind::kPlanStatus:
      s += '\t' + m.plan.status;
      num(s, m.plan.arms);
      num(s, m.plan.episodes);
      num(s, m.plan.decay_rate);
      break;
    case Kind::kError:
      s += '\t';
      for (char c : m.error) s += (c == '\t' || c == '\n') ? ' ' : c;
      break;
  }
  return s;
}

Message decode_body(std::string_view body) {
  Cursor c(store::split(body, '\t'));
  Message m;
  m.kind = kind_from_string(c.next());
  m.seq = parse_uint(c.next());
  m.arm = c.integer();
  if (m.arm < 0) throw Error(ErrorCode::kFormat, "negative arm id");
  switch (m.kind) {
    case Kind::kStateUpdate: {
      StateUpdate& u = m.state;
      u.tick = c.integer();
      u.operator_tick = c.integer();
      u.episode = c.integer();
      u.gripper_pose.position = c.vec<3>();
      u.gripper_pose.orientation = c.vec<3>();
      u.gripper_pose.gripper = c.real();
      u.target_sighting = c.vec<3>();
      u.offset = c.vec<6>();
      u.mode = control_mode_from_string(c.next());
      u.phase = task_phase_from_string(c.next());
      break;
    }
    case Kind::kMetricsUpdate: {
      MetricsUpdate& u = m.metrics;
      u.episodes_done = c.integer();
      u.corrected = c.integer();
      u.interventions = c.integer();
      u.intervention_rate = c.real();
      u.superseded = c.integer();
      break;
    }
    case Kind::kPedalEvent:
      m.pedal.pedal = pedal_kind_from_string(c.next());
      break;
    case Kind::kCorrectionInput: {
      m.correction.vector = c.vec<6>();
      const std::string& g = c.next();
      if (g != "-") {
        const double v = parse_double(g);
        if (v < 0.0 || v > 1.0) throw Error(ErrorCode::kFormat, "gripper outside [0,1]");
        m.correction.gripper = v;
      }
      break;
    }
    case Kind::kArmSelect:
    case Kind::kAdvance:
      break;
    case Kind::kEpisodeEnd: {
      EpisodeEndMsg& e = m.episode_end;
      e.episode = c.integer();
      e.seed = parse_uint(c.next());
      e.outcome.score = c.real();
      e.outcome.phase_reached = task_phase_from_string(c.next());
      e.outcome.ticks_used = c.integer();
      e.outcome.intervention_rate = c.real();
      break;
    }
    case Kind::kPlanStatus:
      m.plan.status = c.next();
      m.plan.arms = c.integer();
      m.plan.episodes = c.integer();
      m.plan.decay_rate = c.real();
      break;
    case Kind::kError:
      m.error = c.next();
      break;
  }
  c.finish();
  return m;
}

std::string encode(const Message& m) {
  const std::string body = encode_body(m);
  return std::to_string(body.size()) + "\n" + body;
}

void Decoder::feed(std::string_view bytes) { buf_.append(bytes); }

std::optional<Message> Decoder::next() {
  const std::size_t nl = buf_.find('\n');
  if (nl == std::string::npos) {
    if (buf_.size() > 20) throw Error(ErrorCode::kFormat, "missing record length");
    return std::nullopt;
  }
  const std::uint64_t len = parse_uint(std::string_view(buf_).substr(0, nl));
  if (len > kMaxRecord) throw Error(ErrorCode::kFormat, "record too large");
  if (buf_.size() < nl + 1 + len) return std::nullopt;
  const std::string body = buf_.substr(nl + 1, len);
  buf_.erase(0, nl + 1 + len);
  return decode_body(body);
}

bool SequenceGuard::accept(std::int64_t arm, std::uint64_t seq) {
  auto it = std::find_if(last_.begin(), last_.end(),
                         [arm](const auto& p) { return p.first == arm; });
  if (it == last_.end()) {
    last_.emplace_back(arm, seq);
    return true;
  }
  if (seq <= it->second) return false;
  it->second = seq;
  return true;
}

std::uint64_t SequenceCounter::next(std::int64_t arm) {
  auto it = std::find_if(next_.begin(), next_.end(),
                         [arm](const auto& p) { return p.first == arm; });
  if (it == next_.end()) {
    next_.emplace_back(arm, 1);
    return 0;
  }
  return it->second++;
}

}  // namespace drc::wire
