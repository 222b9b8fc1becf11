#include "ctfagent/llm_backend.hpp"

#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "ctfagent/common.hpp"
#include "ctfagent/errors.hpp"

namespace ctfagent {

using nlohmann::json;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::ToolResult: return "tool";
  }
  return "user";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  if (s == "tool") return Role::ToolResult;
  throw ValidationError("role", "unknown role '" + std::string(s) + "'");
}

void to_json(json& j, const ChatMessage& m) {
  j = json{{"role", to_string(m.role)}, {"content", m.content}};
  if (m.tool_call) {
    json tc{{"name", m.tool_call->name}, {"arguments", m.tool_call->arguments}};
    if (!m.tool_call->id.empty()) tc["id"] = m.tool_call->id;
    j["tool_call"] = std::move(tc);
  }
}

void from_json(const json& j, ChatMessage& m) {
  m.role = parse_role(j.at("role").get<std::string>());
  m.content = j.value("content", "");
  m.tool_call.reset();
  if (j.contains("tool_call") && !j["tool_call"].is_null()) {
    const auto& tc = j["tool_call"];
    ToolCall call;
    call.name = tc.at("name").get<std::string>();
    const auto& args = tc.contains("arguments") ? tc["arguments"] : json::object();
    call.arguments = args.is_string() ? args.get<std::string>() : args.dump();
    call.id = tc.value("id", "");
    m.tool_call = std::move(call);
  }
}

std::size_t estimate_tokens(std::span<const ChatMessage> history) {
  std::size_t chars = 0;
  for (const auto& m : history) {
    chars += m.content.size();
    if (m.tool_call) chars += m.tool_call->name.size() + m.tool_call->arguments.size();
  }
  return (chars + 3) / 4;
}

ChatMessage ChatBackend::complete(const BackendConfig& config, std::span<const ChatMessage> history,
                                  std::span<const ToolSchema> tools) {
  if (history.empty() || history.front().role != Role::System)
    throw BackendError("history must be non-empty and begin with a system message");
  const auto tokens = estimate_tokens(history);
  if (tokens > config.max_context_tokens)
    throw ContextExceeded("estimated " + std::to_string(tokens) + " tokens exceeds the " +
                          std::to_string(config.max_context_tokens) + "-token context cap");
  auto reply = do_complete(config, history, tools);
  reply.role = Role::Assistant;
  return reply;
}

ScriptedBackend::ScriptedBackend(std::vector<ChatMessage> replies)
    : replies_(replies.begin(), replies.end()) {}

std::size_t ScriptedBackend::remaining() const {
  std::lock_guard lock(mu_);
  return replies_.size();
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

ChatMessage ScriptedBackend::do_complete(const BackendConfig&, std::span<const ChatMessage> history,
                                         std::span<const ToolSchema>) {
  std::lock_guard lock(mu_);
  ++calls_;
  seen_.emplace_back(history.begin(), history.end());
  if (replies_.empty())
    throw BackendError("scripted backend exhausted after " + std::to_string(calls_ - 1) +
                       " replies");
  auto reply = std::move(replies_.front());
  replies_.pop_front();
  return reply;
}

std::vector<ChatMessage> parse_script(std::string_view text, const std::filesystem::path& origin) {
  std::vector<ChatMessage> replies;
  std::size_t lineno = 0;
  for (const auto& raw : text::split_lines(text)) {
    ++lineno;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    try {
      const auto j = json::parse(line);
      if (!j.is_object()) throw ValidationError("reply", "expected a JSON object");
      if (j.contains("content") && !j["content"].is_string())
        throw ValidationError("content", "expected a string");
      if (!j.contains("content") && !j.contains("tool_call"))
        throw ValidationError("reply", "needs content or tool_call");
      json full = j;
      full["role"] = "assistant";
      replies.push_back(full.get<ChatMessage>());
    } catch (const std::exception& e) {
      throw LoadError(origin, lineno, e.what());
    }
  }
  return replies;
}

std::unique_ptr<ScriptedBackend> load_script(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw LoadError(path, 0, e.what());
  }
  return std::make_unique<ScriptedBackend>(parse_script(text, path));
}

ChatMessage with_retries(const RetryPolicy& policy, const std::function<ChatMessage()>& attempt,
                         const std::function<void(std::chrono::milliseconds)>& sleep) {
  auto backoff = policy.initial_backoff;
  for (int tries = 0;; ++tries) {
    try {
      return attempt();
    } catch (const ContextExceeded&) {
      throw;
    } catch (const TransportError& e) {
      if (tries >= policy.max_retries)
        throw BackendError(std::string("transport failed after retries: ") + e.what());
      spdlog::warn("backend transport error ({}), retry {}/{} in {} ms", e.what(), tries + 1,
                   policy.max_retries, backoff.count());
      if (sleep)
        sleep(backoff);
      else
        std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
    }
  }
}

}  // namespace ctfagent
