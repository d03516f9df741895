#include "drclab/ws.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <cstring>
#include <vector>

#include "drclab/core.hpp"

namespace drc::net {

namespace {

constexpr const char* kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
constexpr std::size_t kMaxMessage = 16u << 20;
constexpr std::size_t kMaxHeader = 16u << 10;

[[noreturn]] void fail(const std::string& what) {
  throw Error(ErrorCode::kNetwork, what + ": " + std::strerror(errno));
}

std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3) + 1, '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data,
                                  static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

void write_all(int fd, const char* p, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kNetwork, std::string("send: ") + std::strerror(errno));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Reads an HTTP header block byte by byte so nothing past it is consumed.
std::string read_header(int fd) {
  std::string h;
  char c;
  while (h.size() < kMaxHeader) {
    const ssize_t r = ::recv(fd, &c, 1, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) throw Error(ErrorCode::kNetwork, "connection closed during handshake");
    h.push_back(c);
    if (h.size() >= 4 && h.compare(h.size() - 4, 4, "\r\n\r\n") == 0) return h;
  }
  throw Error(ErrorCode::kNetwork, "handshake header too large");
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::optional<std::string> header_value(const std::string& head, const std::string& name) {
  const std::string want = lower(name) + ":";
  std::size_t pos = head.find("\r\n");
  while (pos != std::string::npos && pos + 2 < head.size()) {
    const std::size_t start = pos + 2;
    const std::size_t end = head.find("\r\n", start);
    if (end == std::string::npos) break;
    const std::string line = head.substr(start, end - start);
    if (lower(line.substr(0, want.size())) == want) {
      std::string v = line.substr(want.size());
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t");
      return b == std::string::npos ? "" : v.substr(b, e - b + 1);
    }
    pos = end;
  }
  return std::nullopt;
}

}  // namespace

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos)
    throw Error(ErrorCode::kInvalidArgument, "endpoint must be host:port, got '" + text + "'");
  Endpoint e;
  e.host = text.substr(0, colon);
  try {
    std::size_t used = 0;
    e.port = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("junk");
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad port in '" + text + "'");
  }
  if (e.port < 0 || e.port > 65535 || e.host.empty())
    throw Error(ErrorCode::kInvalidArgument, "bad endpoint '" + text + "'");
  return e;
}

std::string websocket_accept(const std::string& key) {
  const std::string s = key + kGuid;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(s.data(), s.size(), md, &len, EVP_sha1(), nullptr);
  return base64(md, len);
}

// ---------------------------------------------------------------------------

WsConnection::WsConnection(int fd, bool client_side) : fd_(fd), client_side_(client_side) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

WsConnection::~WsConnection() {
  if (fd_ >= 0) ::close(fd_);
}

void WsConnection::send_frame(int opcode, const std::string& payload) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | opcode));
  const std::uint64_t n = payload.size();
  const unsigned char mask_bit = client_side_ ? 0x80 : 0x00;
  if (n < 126) {
    f.push_back(static_cast<char>(mask_bit | n));
  } else if (n <= 0xffff) {
    f.push_back(static_cast<char>(mask_bit | 126));
    f.push_back(static_cast<char>(n >> 8));
    f.push_back(static_cast<char>(n & 0xff));
  } else {
    f.push_back(static_cast<char>(mask_bit | 127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
  }
  if (client_side_) {
    unsigned char mask[4];
    if (RAND_bytes(mask, 4) != 1) throw Error(ErrorCode::kNetwork, "no randomness for mask");
    f.append(reinterpret_cast<char*>(mask), 4);
    for (std::size_t i = 0; i < n; ++i)
      f.push_back(static_cast<char>(payload[i] ^ static_cast<char>(mask[i % 4])));
  } else {
    f += payload;
  }
  std::lock_guard<std::mutex> lock(send_mutex_);
  write_all(fd_, f.data(), f.size());
}

void WsConnection::send_text(const std::string& payload) {
  if (closed_) throw Error(ErrorCode::kNetwork, "send on closed connection");
  send_frame(0x1, payload);
}

bool WsConnection::read_exact(void* dst, std::size_t n) {
  auto* p = static_cast<char*>(dst);
  while (n > 0) {
    const ssize_t r = ::recv(fd_, p, n, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

std::optional<std::string> WsConnection::receive() {
  std::string message;
  bool in_message = false;
  while (!closed_) {
    unsigned char h[2];
    if (!read_exact(h, 2)) break;
    const bool fin = h[0] & 0x80;
    const int opcode = h[0] & 0x0f;
    const bool masked = h[1] & 0x80;
    std::uint64_t n = h[1] & 0x7f;
    if (n == 126) {
      unsigned char b[2];
      if (!read_exact(b, 2)) break;
      n = (static_cast<std::uint64_t>(b[0]) << 8) | b[1];
    } else if (n == 127) {
      unsigned char b[8];
      if (!read_exact(b, 8)) break;
      n = 0;
      for (unsigned char c : b) n = (n << 8) | c;
    }
    if (n > kMaxMessage || message.size() + n > kMaxMessage) break;
    // Clients must mask, servers must not.
    if (masked == client_side_) break;
    unsigned char mask[4] = {0, 0, 0, 0};
    if (masked && !read_exact(mask, 4)) break;
    std::string payload(static_cast<std::size_t>(n), '\0');
    if (n > 0 && !read_exact(payload.data(), payload.size())) break;
    if (masked)
      for (std::size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<char>(payload[i] ^ static_cast<char>(mask[i % 4]));

    if (opcode == 0x8) {  // close
      if (!close_sent_) {
        close_sent_ = true;
        try {
          send_frame(0x8, payload.substr(0, 2));
        } catch (const Error&) {
        }
      }
      break;
    }
    if (opcode == 0x9) {  // ping
      send_frame(0xA, payload);
      continue;
    }
    if (opcode == 0xA) continue;  // pong
    if (opcode == 0x1 || opcode == 0x2) {
      if (in_message) break;
      message = std::move(payload);
      in_message = true;
    } else if (opcode == 0x0) {
      if (!in_message) break;
      message += payload;
    } else {
      break;
    }
    if (fin) return message;
  }
  closed_ = true;
  ::shutdown(fd_, SHUT_RDWR);
  return std::nullopt;
}

void WsConnection::close() {
  if (closed_) return;
  if (!close_sent_) {
    close_sent_ = true;
    try {
      send_frame(0x8, std::string("\x03\xe8", 2));
    } catch (const Error&) {
    }
  }
  ::shutdown(fd_, SHUT_RDWR);
  closed_ = true;
}

// ---------------------------------------------------------------------------

WsServer::WsServer(const Endpoint& bind) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(bind.port);
  if (::getaddrinfo(bind.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
    throw Error(ErrorCode::kNetwork, "cannot resolve bind address " + bind.host);
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd_ < 0) {
    ::freeaddrinfo(res);
    fail("socket");
  }
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const int rc = ::bind(fd_, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    fail("bind " + bind.host + ":" + port);
  }
  if (::listen(fd_, 8) != 0) fail("listen");
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

WsServer::~WsServer() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<WsConnection> WsServer::accept(int timeout_ms) {
  pollfd p{fd_, POLLIN, 0};
  const int ready = ::poll(&p, 1, timeout_ms);
  if (ready <= 0) return nullptr;
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) return nullptr;
  try {
    timeval tv{5, 0};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    const std::string head = read_header(fd);
    const auto key = header_value(head, "Sec-WebSocket-Key");
    const auto upgrade = header_value(head, "Upgrade");
    if (head.rfind("GET ", 0) != 0 || !key || !upgrade || lower(*upgrade) != "websocket") {
      const std::string body = "drclab session endpoint; connect with a WebSocket client\n";
      const std::string reply = "HTTP/1.1 426 Upgrade Required\r\nUpgrade: websocket\r\n"
                                "Content-Type: text/plain\r\nContent-Length: " +
                                std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n" +
                                body;
      write_all(fd, reply.data(), reply.size());
      ::close(fd);
      return nullptr;
    }
    const std::string reply = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                              "Connection: Upgrade\r\nSec-WebSocket-Accept: " +
                              websocket_accept(*key) + "\r\n\r\n";
    write_all(fd, reply.data(), reply.size());
    tv = timeval{0, 0};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    return std::make_unique<WsConnection>(fd, false);
  } catch (const Error&) {
    ::close(fd);
    return nullptr;
  }
}

std::unique_ptr<WsConnection> ws_connect(const Endpoint& endpoint, const std::string& path) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(endpoint.port);
  if (::getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
    throw Error(ErrorCode::kNetwork, "cannot resolve " + endpoint.host);
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    fail("socket");
  }
  if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
    const int err = errno;
    ::freeaddrinfo(res);
    ::close(fd);
    errno = err;
    fail("connect " + endpoint.host + ":" + port);
  }
  ::freeaddrinfo(res);

  unsigned char raw[16];
  if (RAND_bytes(raw, sizeof raw) != 1) {
    ::close(fd);
    throw Error(ErrorCode::kNetwork, "no randomness for handshake key");
  }
  const std::string key = base64(raw, sizeof raw);
  const std::string req = "GET " + path + " HTTP/1.1\r\nHost: " + endpoint.host + ":" + port +
                          "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                          "Sec-WebSocket-Key: " + key +
                          "\r\nSec-WebSocket-Version: 13\r\n\r\n";
  try {
    write_all(fd, req.data(), req.size());
    const std::string head = read_header(fd);
    const auto accept = header_value(head, "Sec-WebSocket-Accept");
    if (head.rfind("HTTP/1.1 101", 0) != 0 || !accept || *accept != websocket_accept(key))
      throw Error(ErrorCode::kNetwork, "server refused the WebSocket upgrade");
  } catch (...) {
    ::close(fd);
    throw;
  }
  return std::make_unique<WsConnection>(fd, true);
}

}  // namespace drc::net
