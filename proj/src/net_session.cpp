#include "ctfagent/net_session.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>

#include <fmt/core.h>

#include "ctfagent/errors.hpp"

namespace ctfagent {

using Clock = std::chrono::steady_clock;

struct SessionRegistry::Session {
  std::string id;
  std::string host;
  int port = 0;
  int fd = -1;
  SessionState state = SessionState::Open;
  std::vector<TranscriptEntry> transcript;
  mutable std::mutex mu;

  ~Session() { release(); }
  void release() {
    if (fd >= 0) ::close(fd);
    fd = -1;
    state = SessionState::Closed;
  }
};

namespace {

int connect_to(const std::string& host, int port, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const int gai = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res);
  if (gai != 0)
    throw ConnectError(fmt::format("cannot resolve {}: {}", host, ::gai_strerror(gai)));
  std::string last_error = "no addresses";
  for (auto* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK,
                            ai->ai_protocol);
    if (fd < 0) {
      last_error = std::strerror(errno);
      continue;
    }
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      const int pr = ::poll(&p, 1, static_cast<int>(timeout.count()));
      if (pr == 1) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
        errno = err;
      } else {
        if (pr == 0) errno = ETIMEDOUT;
        rc = -1;
      }
    }
    if (rc == 0) {
      ::freeaddrinfo(res);
      return fd;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw ConnectError(fmt::format("connect to {}:{} failed: {}", host, port, last_error));
}

// Reads until the idle window passes with no data, the total cap elapses, or EOF.
std::string drain(int fd, const ReadWindow& window, bool& eof) {
  std::string out;
  std::array<char, 4096> buf{};
  const auto deadline = Clock::now() + window.total;
  eof = false;
  for (;;) {
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) break;
    pollfd p{fd, POLLIN, 0};
    const int pr = ::poll(&p, 1, static_cast<int>(std::min<long long>(left, window.idle.count())));
    if (pr < 0) {
      if (errno == EINTR) continue;
      eof = true;
      break;
    }
    if (pr == 0) break;
    const ssize_t r = ::recv(fd, buf.data(), buf.size(), 0);
    if (r > 0) {
      out.append(buf.data(), static_cast<std::size_t>(r));
    } else if (r == 0) {
      eof = true;
      break;
    } else if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
      eof = true;
      break;
    }
  }
  return out;
}

bool send_all(int fd, std::string_view data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t w = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (w > 0) {
      sent += static_cast<std::size_t>(w);
      continue;
    }
    if (w < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd p{fd, POLLOUT, 0};
      if (::poll(&p, 1, 5000) <= 0) return false;
      continue;
    }
    if (w < 0 && errno == EINTR) continue;
    return false;
  }
  return true;
}

}  // namespace

SessionRegistry::SessionRegistry(ReadWindow window, std::size_t max_open_sessions)
    : window_(window), max_open_(max_open_sessions) {}

SessionRegistry::~SessionRegistry() { close_all(); }

std::shared_ptr<SessionRegistry::Session> SessionRegistry::get(std::string_view id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionError("unknown session id '" + std::string(id) + "'");
  return it->second;
}

StartResult SessionRegistry::start(const std::string& host, int port) {
  if (port < 1 || port > 65535) throw SessionError(fmt::format("invalid port {}", port));
  if (host.empty()) throw SessionError("host must not be empty");
  if (open_count() >= max_open_)
    throw SessionError(fmt::format("session budget exhausted ({} open)", max_open_));

  auto s = std::make_shared<Session>();
  s->host = host;
  s->port = port;
  s->fd = connect_to(host, port, window_.total);
  {
    std::lock_guard lock(mu_);
    s->id = fmt::format("nc-{}", next_id_++);
    sessions_.emplace(s->id, s);
  }
  std::lock_guard lock(s->mu);
  bool eof = false;
  StartResult result{s->id, drain(s->fd, window_, eof), eof};
  if (!result.banner.empty()) s->transcript.push_back({Direction::Received, result.banner});
  if (eof) s->release();
  return result;
}

SendResult SessionRegistry::send_line(std::string_view id, std::string_view line) {
  auto s = get(id);
  std::lock_guard lock(s->mu);
  if (s->state == SessionState::Closed)
    throw SessionError("session '" + std::string(id) + "' is closed");
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
  std::string payload(line);
  payload += '\n';
  s->transcript.push_back({Direction::Sent, payload});
  SendResult result;
  if (!send_all(s->fd, payload)) {
    // peer already gone; hand back anything it left in the buffer
    bool eof = false;
    result.response = drain(s->fd, ReadWindow{std::chrono::milliseconds(0), window_.idle}, eof);
    result.end_of_stream = true;
  } else {
    result.response = drain(s->fd, window_, result.end_of_stream);
  }
  if (!result.response.empty()) s->transcript.push_back({Direction::Received, result.response});
  if (result.end_of_stream) s->release();
  return result;
}

void SessionRegistry::close(std::string_view id) {
  auto s = get(id);
  std::lock_guard lock(s->mu);
  s->release();
}

void SessionRegistry::close_all() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  for (auto& s : all) {
    std::lock_guard lock(s->mu);
    s->release();
  }
}

SessionState SessionRegistry::state(std::string_view id) const {
  auto s = get(id);
  std::lock_guard lock(s->mu);
  return s->state;
}

std::vector<TranscriptEntry> SessionRegistry::transcript(std::string_view id) const {
  auto s = get(id);
  std::lock_guard lock(s->mu);
  return s->transcript;
}

std::size_t SessionRegistry::open_count() const {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  std::size_t n = 0;
  for (const auto& s : all) {
    std::lock_guard lock(s->mu);
    n += s->state == SessionState::Open;
  }
  return n;
}

}  // namespace ctfagent
