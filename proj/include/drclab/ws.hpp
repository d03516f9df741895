#pragma once

// Minimal WebSocket (RFC 6455) endpoints over blocking POSIX sockets.
// Enough for the session protocol: text and binary messages, fragmented
// frames, ping/pong and close. No extensions, no TLS.

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace drc::net {

// "host:port" with a numeric or resolvable host.
struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;
};
Endpoint parse_endpoint(const std::string& text);

// Sec-WebSocket-Accept value for a client key.
std::string websocket_accept(const std::string& key);

class WsConnection {
 public:
  WsConnection(int fd, bool client_side);
  ~WsConnection();
  WsConnection(const WsConnection&) = delete;
  WsConnection& operator=(const WsConnection&) = delete;

  // Thread-safe with respect to other senders.
  void send_text(const std::string& payload);
  // Blocks for the next complete data message; empty once the peer closed.
  std::optional<std::string> receive();
  // Sends a close frame (once) and shuts the socket down.
  void close();
  bool closed() const { return closed_; }

 private:
  void send_frame(int opcode, const std::string& payload);
  bool read_exact(void* dst, std::size_t n);

  int fd_;
  bool client_side_;
  std::atomic<bool> closed_{false};
  std::atomic<bool> close_sent_{false};
  std::mutex send_mutex_;
};

class WsServer {
 public:
  // Port 0 picks a free port.
  explicit WsServer(const Endpoint& bind);
  ~WsServer();
  WsServer(const WsServer&) = delete;
  WsServer& operator=(const WsServer&) = delete;

  int port() const { return port_; }
  // Waits up to timeout_ms for a client and completes the handshake. Plain
  // HTTP requests get a short status reply and are dropped.
  std::unique_ptr<WsConnection> accept(int timeout_ms);

 private:
  int fd_ = -1;
  int port_ = 0;
};

std::unique_ptr<WsConnection> ws_connect(const Endpoint& endpoint,
                                         const std::string& path = "/session");

}  // namespace drc::net
