#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace ctfagent {

enum class SessionState { Open, Closed };
enum class Direction { Sent, Received };

struct TranscriptEntry {
  Direction direction;
  std::string bytes;
  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

/// Reads stop after `idle` with no data, or once `total` has elapsed.
struct ReadWindow {
  std::chrono::milliseconds idle{200};
  std::chrono::milliseconds total{5000};
};

struct StartResult {
  std::string session_id;
  std::string banner;
  bool end_of_stream = false;
};

struct SendResult {
  std::string response;
  bool end_of_stream = false;
};

/// Interactive line-oriented TCP sessions (the start/send/close netcat tools).
/// The registry is thread-safe; operations on one session are serialised.
class SessionRegistry {
 public:
  explicit SessionRegistry(ReadWindow window = {}, std::size_t max_open_sessions = 8);
  ~SessionRegistry();
  SessionRegistry(const SessionRegistry&) = delete;
  SessionRegistry& operator=(const SessionRegistry&) = delete;

  /// Throws ConnectError when the service is unreachable, SessionError on bad input/budget.
  StartResult start(const std::string& host, int port);
  /// Sends `line` plus one newline (trailing CR/LF in `line` are dropped first), then drains.
  SendResult send_line(std::string_view session_id, std::string_view line);
  /// Idempotent for known ids; unknown ids throw SessionError.
  void close(std::string_view session_id);
  void close_all();

  SessionState state(std::string_view session_id) const;
  std::vector<TranscriptEntry> transcript(std::string_view session_id) const;
  std::size_t open_count() const;
  const ReadWindow& window() const noexcept { return window_; }

 private:
  struct Session;
  std::shared_ptr<Session> get(std::string_view session_id) const;

  ReadWindow window_;
  std::size_t max_open_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>, std::less<>> sessions_;
  std::size_t next_id_ = 1;
};

}  // namespace ctfagent
