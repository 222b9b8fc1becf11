#pragma once

#include <sys/types.h>

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace ctfagent {

inline constexpr int kTimeoutExitCode = -124;
inline constexpr int kPolicyDeniedExitCode = -126;
inline constexpr std::string_view kTruncationMarker = "...[truncated]";
inline constexpr std::size_t kDefaultOutputCap = 16 * 1024;
inline constexpr std::chrono::milliseconds kDefaultCommandTimeout{60'000};

struct CommandResult {
  std::string stdout_text;
  std::string stderr_text;
  int exit_code = 0;
  bool truncated = false;  // stdout only
  bool timed_out = false;
  std::size_t original_length_bytes = 0;  // stdout bytes produced before capping
  std::int64_t duration_ms = 0;
};

/// Returns a denial reason, or nullopt to allow the command.
using CommandPolicy = std::function<std::optional<std::string>(std::string_view command)>;

/// Keeps `data` within `cap` bytes; when cut, the result ends with kTruncationMarker and
/// its total length is exactly max(cap, marker length).
std::string cap_output(std::string data, std::size_t cap, bool* truncated = nullptr);

/// Runs `command` with /bin/sh -c in `workdir`, in its own process group. On timeout the
/// whole group is killed and the partial output is returned with kTimeoutExitCode.
/// Throws EnvironmentError when workdir does not exist.
CommandResult exec_command(const std::filesystem::path& workdir, std::string_view command,
                           std::chrono::milliseconds timeout = kDefaultCommandTimeout,
                           std::size_t output_cap_bytes = kDefaultOutputCap);

/// Per-challenge working directory plus an allow-policy hook.
class Sandbox {
 public:
  explicit Sandbox(std::filesystem::path root, CommandPolicy policy = {});

  CommandResult exec(std::string_view command,
                     std::chrono::milliseconds timeout = kDefaultCommandTimeout,
                     std::size_t output_cap_bytes = kDefaultOutputCap) const;

  /// Resolves a path relative to the root; throws EnvironmentError if it escapes the root.
  std::filesystem::path resolve(std::string_view path) const;
  const std::filesystem::path& root() const noexcept { return root_; }
  bool exists() const;

 private:
  std::filesystem::path root_;
  CommandPolicy policy_;
};

std::string shell_quote(std::string_view s);

/// True once a TCP connect to host:port succeeds.
bool wait_for_port(const std::string& host, int port, std::chrono::milliseconds timeout);

/// A challenge service started from its launch command; the process group is killed on
/// destruction.
class ServiceProcess {
 public:
  ServiceProcess() = default;
  static ServiceProcess launch(const std::filesystem::path& workdir, std::string_view command,
                               const std::string& host, int port,
                               std::chrono::milliseconds ready_timeout = std::chrono::seconds(5));
  ServiceProcess(ServiceProcess&& other) noexcept;
  ServiceProcess& operator=(ServiceProcess&& other) noexcept;
  ServiceProcess(const ServiceProcess&) = delete;
  ServiceProcess& operator=(const ServiceProcess&) = delete;
  ~ServiceProcess();

  void stop();
  bool running() const noexcept { return pid_ > 0; }

 private:
  explicit ServiceProcess(pid_t pid) : pid_(pid) {}
  pid_t pid_ = -1;
};

}  // namespace ctfagent
