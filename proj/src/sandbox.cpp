#include "ctfagent/sandbox.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <thread>

#include <fmt/core.h>

#include "ctfagent/common.hpp"
#include "ctfagent/errors.hpp"

namespace ctfagent {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(Fd&& o) noexcept : fd(std::exchange(o.fd, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd = std::exchange(o.fd, -1);
    return *this;
  }
  ~Fd() { reset(); }
  void reset() {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
};

// Collects a stream, keeping at most `keep` bytes but counting all of them.
struct Capture {
  std::string data;
  std::size_t total = 0;
  std::size_t keep = 0;
  void append(const char* buf, std::size_t n) {
    total += n;
    if (data.size() < keep) data.append(buf, std::min(n, keep - data.size()));
  }
};

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return left.count() < 0 ? 0 : static_cast<int>(left.count());
}

int decode_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

void kill_group(pid_t pid) {
  if (pid > 0) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
  }
}

}  // namespace

std::string cap_output(std::string data, std::size_t cap, bool* truncated) {
  const bool cut = data.size() > cap;
  if (truncated) *truncated = cut;
  if (!cut) return data;
  const std::size_t keep = cap > kTruncationMarker.size() ? cap - kTruncationMarker.size() : 0;
  data.resize(keep);
  data += kTruncationMarker;
  return data;
}

CommandResult exec_command(const fs::path& workdir, std::string_view command,
                           std::chrono::milliseconds timeout, std::size_t output_cap_bytes) {
  if (text::trim(command).empty()) throw ValidationError("command", "must not be empty");
  std::error_code ec;
  if (!fs::is_directory(workdir, ec))
    throw EnvironmentError("sandbox directory does not exist: " + workdir.string());

  int out_pipe[2], err_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw EnvironmentError(std::strerror(errno));
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    throw EnvironmentError(std::strerror(errno));
  }
  Fd out_r(out_pipe[0]), out_w(out_pipe[1]), err_r(err_pipe[0]), err_w(err_pipe[1]);

  const std::string cmd(command);
  const std::string dir = workdir.string();
  const auto started = Clock::now();
  const pid_t pid = ::fork();
  if (pid < 0) throw EnvironmentError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    if (::chdir(dir.c_str()) != 0) ::_exit(126);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    ::dup2(out_w.fd, STDOUT_FILENO);
    ::dup2(err_w.fd, STDERR_FILENO);
    ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  out_w.reset();
  err_w.reset();
  ::fcntl(out_r.fd, F_SETFL, O_NONBLOCK);
  ::fcntl(err_r.fd, F_SETFL, O_NONBLOCK);

  // keep enough stdout to build the capped result
  Capture out{{}, 0, output_cap_bytes + 1};
  Capture err{{}, 0, output_cap_bytes + 1};
  const auto deadline = started + timeout;
  bool timed_out = false;
  bool reaped = false;
  int status = 0;
  std::array<char, 8192> buf{};
  Clock::time_point reaped_at{};

  while (out_r.fd >= 0 || err_r.fd >= 0) {
    if (!reaped) {
      const pid_t w = ::waitpid(pid, &status, WNOHANG);
      if (w == pid) {
        reaped = true;
        reaped_at = Clock::now();
      }
    }
    int wait_ms = remaining_ms(deadline);
    if (wait_ms == 0) {
      timed_out = !reaped;
      break;
    }
    // After the shell exits, stray background children may hold the pipes open.
    if (reaped) {
      const int grace = 100 - static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                   Clock::now() - reaped_at)
                                                   .count());
      if (grace <= 0) break;
      wait_ms = std::min(wait_ms, grace);
    } else {
      wait_ms = std::min(wait_ms, 50);
    }
    pollfd fds[2];
    nfds_t n = 0;
    if (out_r.fd >= 0) fds[n++] = {out_r.fd, POLLIN, 0};
    if (err_r.fd >= 0) fds[n++] = {err_r.fd, POLLIN, 0};
    const int pr = ::poll(fds, n, wait_ms);
    if (pr < 0 && errno != EINTR) break;
    for (nfds_t i = 0; i < n && pr > 0; ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      Fd& src = fds[i].fd == out_r.fd ? out_r : err_r;
      Capture& cap = fds[i].fd == out_r.fd ? out : err;
      for (;;) {
        const ssize_t r = ::read(src.fd, buf.data(), buf.size());
        if (r > 0) {
          cap.append(buf.data(), static_cast<std::size_t>(r));
          continue;
        }
        if (r == 0 || (errno != EAGAIN && errno != EINTR)) src.reset();
        break;
      }
    }
  }

  if (timed_out) {
    kill_group(pid);
    ::waitpid(pid, &status, 0);
  } else {
    if (!reaped) {
      // pipes closed; the shell is about to exit
      while (!reaped) {
        const pid_t w = ::waitpid(pid, &status, WNOHANG);
        if (w == pid) {
          reaped = true;
          break;
        }
        if (remaining_ms(deadline) == 0) {
          timed_out = true;
          kill_group(pid);
          ::waitpid(pid, &status, 0);
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      }
    }
    ::kill(-pid, SIGKILL);  // leftovers in the group
  }

  CommandResult result;
  result.original_length_bytes = out.total;
  result.stdout_text = cap_output(std::move(out.data), output_cap_bytes, &result.truncated);
  result.stderr_text = cap_output(std::move(err.data), output_cap_bytes);
  result.timed_out = timed_out;
  result.exit_code = timed_out ? kTimeoutExitCode : decode_status(status);
  result.duration_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - started).count();
  return result;
}

Sandbox::Sandbox(fs::path root, CommandPolicy policy)
    : root_(std::move(root)), policy_(std::move(policy)) {}

bool Sandbox::exists() const {
  std::error_code ec;
  return fs::is_directory(root_, ec);
}

CommandResult Sandbox::exec(std::string_view command, std::chrono::milliseconds timeout,
                            std::size_t output_cap_bytes) const {
  if (!exists()) throw EnvironmentError("sandbox directory does not exist: " + root_.string());
  if (policy_) {
    if (auto reason = policy_(command)) {
      CommandResult denied;
      denied.exit_code = kPolicyDeniedExitCode;
      denied.stderr_text = "command denied by sandbox policy: " + *reason;
      return denied;
    }
  }
  return exec_command(root_, command, timeout, output_cap_bytes);
}

fs::path Sandbox::resolve(std::string_view path) const {
  const fs::path root = fs::weakly_canonical(root_);
  fs::path p(path);
  const fs::path full = fs::weakly_canonical(p.is_absolute() ? p : root / p);
  auto [r, f] = std::mismatch(root.begin(), root.end(), full.begin(), full.end());
  if (r != root.end()) throw EnvironmentError("path escapes the sandbox: " + std::string(path));
  return full;
}

std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += '\'';
  return out;
}

bool wait_for_port(const std::string& host, int port, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  for (;;) {
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) == 0) {
      for (auto* ai = res; ai; ai = ai->ai_next) {
        Fd s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
        if (s.fd >= 0 && ::connect(s.fd, ai->ai_addr, ai->ai_addrlen) == 0) {
          ::freeaddrinfo(res);
          return true;
        }
      }
      ::freeaddrinfo(res);
    }
    if (Clock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
}

ServiceProcess ServiceProcess::launch(const fs::path& workdir, std::string_view command,
                                      const std::string& host, int port,
                                      std::chrono::milliseconds ready_timeout) {
  std::error_code ec;
  if (!fs::is_directory(workdir, ec))
    throw EnvironmentError("sandbox directory does not exist: " + workdir.string());
  const std::string cmd(command);
  const std::string dir = workdir.string();
  const pid_t pid = ::fork();
  if (pid < 0) throw EnvironmentError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    if (::chdir(dir.c_str()) != 0) ::_exit(126);
    const int devnull = ::open("/dev/null", O_RDWR);
    if (devnull >= 0) {
      ::dup2(devnull, STDIN_FILENO);
      ::dup2(devnull, STDOUT_FILENO);
      ::dup2(devnull, STDERR_FILENO);
    }
    ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ServiceProcess proc(pid);
  const auto deadline = Clock::now() + ready_timeout;
  while (Clock::now() < deadline) {
    int status = 0;
    if (::waitpid(pid, &status, WNOHANG) == pid) {
      proc.pid_ = -1;
      throw EnvironmentError(fmt::format("service exited with status {} before accepting on {}:{}",
                                         decode_status(status), host, port));
    }
    if (wait_for_port(host, port, std::chrono::milliseconds(0))) return proc;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  throw EnvironmentError(fmt::format("service did not accept connections on {}:{} within {} ms",
                                     host, port, ready_timeout.count()));
}

ServiceProcess::ServiceProcess(ServiceProcess&& other) noexcept
    : pid_(std::exchange(other.pid_, -1)) {}

ServiceProcess& ServiceProcess::operator=(ServiceProcess&& other) noexcept {
  if (this != &other) {
    stop();
    pid_ = std::exchange(other.pid_, -1);
  }
  return *this;
}

ServiceProcess::~ServiceProcess() { stop(); }

void ServiceProcess::stop() {
  if (pid_ <= 0) return;
  kill_group(pid_);
  int status = 0;
  ::waitpid(pid_, &status, 0);
  pid_ = -1;
}

}  // namespace ctfagent
