#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include "ctfagent/common.hpp"
#include "ctfagent/errors.hpp"
#include "ctfagent/llm_backend.hpp"

namespace ctfagent {

using nlohmann::json;

HttpBackendOptions HttpBackendOptions::from_env() {
  HttpBackendOptions o;
  const char* base = std::getenv("CTFAGENT_API_BASE");
  o.base_url = base && *base ? base : "https://api.openai.com";
  const char* key = std::getenv("CTFAGENT_API_KEY");
  if (!key || !*key) key = std::getenv("OPENAI_API_KEY");
  o.api_key = key ? key : "";
  return o;
}

HttpChatBackend::HttpChatBackend(HttpBackendOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) throw ConfigError("HTTP backend needs a base URL");
}

json HttpChatBackend::build_request(const BackendConfig& config,
                                    std::span<const ChatMessage> history,
                                    std::span<const ToolSchema> tools) {
  json messages = json::array();
  std::string last_call_id;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& m = history[i];
    json msg{{"role", to_string(m.role)}, {"content", m.content}};
    if (m.role == Role::Assistant && m.tool_call) {
      last_call_id = m.tool_call->id.empty() ? "call_" + std::to_string(i) : m.tool_call->id;
      msg["tool_calls"] = json::array({json{
          {"id", last_call_id},
          {"type", "function"},
          {"function", {{"name", m.tool_call->name}, {"arguments", m.tool_call->arguments}}}}});
    } else if (m.role == Role::ToolResult) {
      msg["tool_call_id"] =
          m.tool_call && !m.tool_call->id.empty() ? m.tool_call->id : last_call_id;
    }
    messages.push_back(std::move(msg));
  }
  json body{{"model", config.model_name},
            {"temperature", config.temperature},
            {"messages", std::move(messages)}};
  if (config.supports_tool_calls && !tools.empty()) {
    json ts = json::array();
    for (const auto& t : tools)
      ts.push_back({{"type", "function"},
                    {"function",
                     {{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}}}});
    body["tools"] = std::move(ts);
  }
  return body;
}

ChatMessage HttpChatBackend::parse_response(int status, const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    if (status == 429 || status >= 500)
      throw TransportError("HTTP " + std::to_string(status));
    throw BackendError("HTTP " + std::to_string(status) + ": unparseable body");
  }
  if (status != 200) {
    std::string code, message;
    if (j.contains("error") && j["error"].is_object()) {
      const auto& e = j["error"];
      if (e.contains("code") && e["code"].is_string()) code = e["code"].get<std::string>();
      if (e.contains("message") && e["message"].is_string()) message = e["message"].get<std::string>();
    }
    if (code == "context_length_exceeded" || text::icontains(message, "maximum context length"))
      throw ContextExceeded(message.empty() ? code : message);
    if (status == 429 || status >= 500)
      throw TransportError("HTTP " + std::to_string(status) + ": " + message);
    throw BackendError("HTTP " + std::to_string(status) + ": " + message);
  }
  try {
    const auto& msg = j.at("choices").at(0).at("message");
    ChatMessage reply{Role::Assistant, {}, std::nullopt};
    if (msg.contains("content") && msg["content"].is_string())
      reply.content = msg["content"].get<std::string>();
    if (msg.contains("tool_calls") && msg["tool_calls"].is_array() && !msg["tool_calls"].empty()) {
      const auto& tc = msg["tool_calls"][0];
      reply.tool_call = ToolCall{tc.at("function").at("name").get<std::string>(),
                                 tc.at("function").value("arguments", "{}"), tc.value("id", "")};
    }
    return reply;
  } catch (const json::exception& e) {
    throw BackendError(std::string("unexpected response shape: ") + e.what());
  }
}

ChatMessage HttpChatBackend::do_complete(const BackendConfig& config,
                                         std::span<const ChatMessage> history,
                                         std::span<const ToolSchema> tools) {
  const std::string body = build_request(config, history, tools).dump();
  return with_retries(options_.retry, [&]() -> ChatMessage {
    httplib::Client client(options_.base_url);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    httplib::Headers headers;
    if (!options_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + options_.api_key);
    auto res = client.Post(options_.path, headers, body, "application/json");
    if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
    return parse_response(res->status, res->body);
  });
}

}  // namespace ctfagent
