#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctfagent/tool_schema.hpp"

namespace ctfagent {

enum class Role { System, User, Assistant, ToolResult };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct ToolCall {
  std::string name;
  std::string arguments;  // JSON text
  std::string id;         // provider call id; empty for scripted replies
  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

struct ChatMessage {
  Role role = Role::User;
  std::string content;
  std::optional<ToolCall> tool_call;  // on Assistant: the call; on ToolResult: the call answered

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

void to_json(nlohmann::json& j, const ChatMessage& m);
void from_json(const nlohmann::json& j, ChatMessage& m);

inline constexpr std::size_t kDefaultContextTokens = 128'000;

struct BackendConfig {
  std::string model_name = "scripted";
  double temperature = 0.0;
  std::size_t max_context_tokens = kDefaultContextTokens;
  bool supports_tool_calls = true;
};

/// Token estimate: ceil(characters / 4) summed over message contents and tool-call
/// arguments. A heuristic, not provider-exact; monotone in history length.
std::size_t estimate_tokens(std::span<const ChatMessage> history);

/// Uniform chat interface. complete() validates the history and enforces the context cap
/// before handing off to the provider.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  /// Throws ContextExceeded when estimate_tokens(history) > config.max_context_tokens,
  /// BackendError on provider failure.
  ChatMessage complete(const BackendConfig& config, std::span<const ChatMessage> history,
                       std::span<const ToolSchema> tools);

 protected:
  virtual ChatMessage do_complete(const BackendConfig& config,
                                  std::span<const ChatMessage> history,
                                  std::span<const ToolSchema> tools) = 0;
};

/// Replays a fixed list of assistant replies in order. Confined to one session.
class ScriptedBackend final : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<ChatMessage> replies);

  std::size_t remaining() const;
  std::size_t calls() const;
  /// Histories seen by each call, for test inspection.
  const std::vector<std::vector<ChatMessage>>& seen() const noexcept { return seen_; }

 protected:
  ChatMessage do_complete(const BackendConfig&, std::span<const ChatMessage> history,
                          std::span<const ToolSchema>) override;

 private:
  std::deque<ChatMessage> replies_;
  std::vector<std::vector<ChatMessage>> seen_;
  std::size_t calls_ = 0;
  mutable std::mutex mu_;
};

/// Script file: JSON lines, each {"content": str, "tool_call": {"name": str,
/// "arguments": object|string}}. Blank lines and lines starting with '#' are skipped.
std::vector<ChatMessage> parse_script(std::string_view text, const std::filesystem::path& origin = {});
std::unique_ptr<ScriptedBackend> load_script(const std::filesystem::path& path);

/// Calls a user function; handy for judges and generators in tests.
class CallbackBackend final : public ChatBackend {
 public:
  using Fn = std::function<ChatMessage(std::span<const ChatMessage>)>;
  explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}

 protected:
  ChatMessage do_complete(const BackendConfig&, std::span<const ChatMessage> history,
                          std::span<const ToolSchema>) override {
    return fn_(history);
  }

 private:
  Fn fn_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

/// Runs `attempt`, retrying TransportError up to policy.max_retries times with
/// exponential backoff. ContextExceeded and other errors propagate immediately.
ChatMessage with_retries(const RetryPolicy& policy, const std::function<ChatMessage()>& attempt,
                         const std::function<void(std::chrono::milliseconds)>& sleep = {});

/// OpenAI-compatible /v1/chat/completions client.
struct HttpBackendOptions {
  std::string base_url;  // e.g. https://api.openai.com
  std::string api_key;
  std::string path = "/v1/chat/completions";
  std::chrono::seconds timeout{120};
  RetryPolicy retry{};

  /// CTFAGENT_API_BASE (default https://api.openai.com) and CTFAGENT_API_KEY or OPENAI_API_KEY.
  static HttpBackendOptions from_env();
};

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpBackendOptions options);

  /// Request body sent for a history; exposed for tests.
  static nlohmann::json build_request(const BackendConfig& config,
                                      std::span<const ChatMessage> history,
                                      std::span<const ToolSchema> tools);
  /// Maps an HTTP status and body to a reply or the matching error.
  static ChatMessage parse_response(int status, const std::string& body);

 protected:
  ChatMessage do_complete(const BackendConfig& config, std::span<const ChatMessage> history,
                          std::span<const ToolSchema> tools) override;

 private:
  HttpBackendOptions options_;
};

}  // namespace ctfagent
