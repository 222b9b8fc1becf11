#pragma once

#include <string>
#include <string_view>

namespace ctfagent {

/// One parsed ReAct reply.
struct ReactAction {
  enum class Kind { ToolCall, FinalAnswer, Malformed };
  Kind kind = Kind::Malformed;
  std::string name;    // tool name, ToolCall only
  std::string input;   // action_input as text (objects are serialised JSON)
  std::string reason;  // Malformed only

  static ReactAction tool_call(std::string name, std::string input) {
    return {Kind::ToolCall, std::move(name), std::move(input), {}};
  }
  static ReactAction final_answer(std::string text) {
    return {Kind::FinalAnswer, {}, std::move(text), {}};
  }
  static ReactAction malformed(std::string reason) {
    return {Kind::Malformed, {}, {}, std::move(reason)};
  }
  friend bool operator==(const ReactAction&, const ReactAction&) = default;
};

inline constexpr std::string_view kFinalAnswerAction = "Final Answer";

/// Extracts the single fenced JSON blob (``` or ''' fences; blocks tagged `json` or whose
/// body starts with '{'). Zero blobs, two or more, invalid JSON or a missing "action"
/// yield Malformed.
ReactAction parse_react(std::string_view text);

}  // namespace ctfagent
