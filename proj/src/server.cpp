#include "drclab/server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

namespace drc::gateway {

Pacing pacing_from_string(const std::string& s) {
  if (s == "fast") return Pacing::kFast;
  if (s == "realtime") return Pacing::kRealtime;
  if (s == "lockstep") return Pacing::kLockstep;
  throw Error(ErrorCode::kInvalidArgument, "unknown pacing '" + s + "'");
}

net::Endpoint default_bind() {
  const char* env = std::getenv(kBindEnv);
  return net::parse_endpoint(env && *env ? env : kDefaultBind);
}

namespace {

struct InboxItem {
  enum class Kind { kConnect, kMessage, kBad, kDisconnect };
  Kind kind = Kind::kMessage;
  ClientId client = 0;
  wire::Message message;
  std::string error;
};

class Inbox {
 public:
  void push(InboxItem item) {
    {
      std::lock_guard<std::mutex> lock(m_);
      q_.push_back(std::move(item));
    }
    cv_.notify_all();
  }
  // Waits up to `wait` for at least one item, then takes everything.
  std::deque<InboxItem> take(std::chrono::milliseconds wait) {
    std::unique_lock<std::mutex> lock(m_);
    if (q_.empty()) cv_.wait_for(lock, wait, [this] { return !q_.empty(); });
    std::deque<InboxItem> out;
    out.swap(q_);
    return out;
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::deque<InboxItem> q_;
};

void read_loop(std::shared_ptr<net::WsConnection> conn, ClientId id, Inbox& inbox) {
  wire::Decoder decoder;
  while (auto frame = conn->receive()) {
    try {
      decoder.feed(*frame);
      while (auto m = decoder.next()) inbox.push({InboxItem::Kind::kMessage, id, *m, {}});
    } catch (const Error& e) {
      decoder = wire::Decoder{};
      inbox.push({InboxItem::Kind::kBad, id, {}, e.what()});
    }
  }
  inbox.push({InboxItem::Kind::kDisconnect, id, {}, {}});
}

}  // namespace

ServeResult serve(std::shared_ptr<const policy::Policy> policy,
                  const loop::ExperimentPlan& plan, const SessionConfig& cfg,
                  const ServeOptions& options) {
  SessionCore core(std::move(policy), plan, cfg);
  net::WsServer server(options.bind);
  if (options.on_listening) options.on_listening(server.port());

  Inbox inbox;
  std::mutex conns_mutex;
  std::map<ClientId, std::shared_ptr<net::WsConnection>> conns;
  std::vector<std::thread> readers;
  std::atomic<bool> stop{false};

  std::thread acceptor([&] {
    ClientId next_id = 1;
    while (!stop) {
      std::unique_ptr<net::WsConnection> c = server.accept(50);
      if (!c) continue;
      std::shared_ptr<net::WsConnection> conn(std::move(c));
      const ClientId id = next_id++;
      {
        std::lock_guard<std::mutex> lock(conns_mutex);
        conns[id] = conn;
        inbox.push({InboxItem::Kind::kConnect, id, {}, {}});
        readers.emplace_back(read_loop, conn, id, std::ref(inbox));
      }
    }
  });

  auto dispatch = [&] {
    for (const Outgoing& o : core.drain()) {
      const std::string record = wire::encode(o.message);
      std::lock_guard<std::mutex> lock(conns_mutex);
      for (auto& [id, conn] : conns) {
        if (o.to && *o.to != id) continue;
        if (conn->closed()) continue;
        try {
          conn->send_text(record);
        } catch (const Error&) {
          conn->close();
        }
      }
    }
  };

  int live_clients = 0;
  bool ever_connected = false;
  // Returns the number of Advance requests seen.
  auto absorb = [&](std::chrono::milliseconds wait) {
    int advances = 0;
    for (InboxItem& item : inbox.take(wait)) {
      switch (item.kind) {
        case InboxItem::Kind::kConnect:
          core.connect(item.client);
          ++live_clients;
          ever_connected = true;
          break;
        case InboxItem::Kind::kDisconnect:
          core.disconnect(item.client);
          --live_clients;
          break;
        case InboxItem::Kind::kBad:
          core.reject(item.client, "malformed message: " + item.error);
          break;
        case InboxItem::Kind::kMessage:
          if (item.message.kind == wire::Kind::kAdvance) ++advances;
          core.submit(item.client, item.message);
          break;
      }
    }
    dispatch();
    return advances;
  };

  const auto period = std::chrono::duration<double>(1.0 / cfg.operator_rate);
  const auto start = std::chrono::steady_clock::now();
  int credit = 0;
  try {
    while (!core.finished()) {
      // A lockstep session whose clients all left runs out freely.
      const bool orphaned = ever_connected && live_clients == 0;
      if (options.pacing == Pacing::kLockstep && !orphaned) {
        while (credit == 0 && !(ever_connected && live_clients == 0))
          credit += absorb(std::chrono::milliseconds(100));
        if (credit > 0) --credit;
      } else {
        absorb(std::chrono::milliseconds(0));
        if (options.pacing == Pacing::kRealtime)
          std::this_thread::sleep_until(
              start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                          period * static_cast<double>(core.operator_tick())));
      }
      core.step();
      dispatch();
    }
    // Late messages still get their error replies.
    absorb(std::chrono::milliseconds(0));
  } catch (...) {
    stop = true;
    acceptor.join();
    for (auto& [id, conn] : conns) conn->close();
    for (auto& t : readers) t.join();
    throw;
  }

  stop = true;
  acceptor.join();
  {
    std::lock_guard<std::mutex> lock(conns_mutex);
    for (auto& [id, conn] : conns) conn->close();
  }
  for (auto& t : readers) t.join();

  ServeResult res;
  res.trajectories = core.trajectories();
  res.corrected = core.corrected();
  res.input_log = core.input_log();
  for (int a = 0; a < cfg.arms; ++a) res.superseded.push_back(core.superseded(a));
  return res;
}

std::vector<wire::Message> run_scripted_client(const net::Endpoint& endpoint,
                                               const std::vector<LoggedInput>& log) {
  auto conn = net::ws_connect(endpoint);
  std::vector<wire::Message> received;
  wire::Decoder decoder;
  std::deque<wire::Message> pending;
  auto next_message = [&]() -> std::optional<wire::Message> {
    while (pending.empty()) {
      auto frame = conn->receive();
      if (!frame) return std::nullopt;
      decoder.feed(*frame);
      while (auto m = decoder.next()) pending.push_back(*m);
    }
    wire::Message m = pending.front();
    pending.pop_front();
    return m;
  };

  std::size_t i = 0;
  bool finished = false;
  for (std::int64_t tick = 0; !finished; ++tick) {
    std::string batch;
    for (; i < log.size() && log[i].operator_tick <= tick; ++i)
      batch += wire::encode(log[i].message);
    wire::Message adv;
    adv.kind = wire::Kind::kAdvance;
    batch += wire::encode(adv);
    conn->send_text(batch);
    for (;;) {
      auto m = next_message();
      if (!m) {
        finished = true;
        break;
      }
      received.push_back(*m);
      if (m->kind == wire::Kind::kPlanStatus && m->plan.status == "finished") {
        finished = true;
        break;
      }
      if (m->kind == wire::Kind::kStateUpdate && m->state.operator_tick == tick) break;
    }
  }
  conn->close();
  return received;
}

}  // namespace drc::gateway
