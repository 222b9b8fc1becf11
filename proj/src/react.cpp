#include "ctfagent/react.hpp"

#include <optional>
#include <vector>

#include <json.hpp>

#include "ctfagent/common.hpp"

namespace ctfagent {

using nlohmann::json;

namespace {

struct Block {
  std::string tag;
  std::string body;
};

std::size_t find_fence(std::string_view s, std::size_t from) {
  const auto a = s.find("```", from);
  const auto b = s.find("'''", from);
  return std::min(a, b);
}

// nullopt on an unterminated fence
std::optional<std::vector<Block>> fenced_blocks(std::string_view s) {
  std::vector<Block> blocks;
  std::size_t pos = 0;
  for (;;) {
    const auto open = find_fence(s, pos);
    if (open == std::string_view::npos) break;
    const std::string_view fence = s.substr(open, 3);
    const auto eol = s.find('\n', open + 3);
    // tag is whatever follows the fence on its line, unless the blob is inline
    std::size_t body_start = open + 3;
    std::string tag;
    if (eol != std::string_view::npos) {
      const auto rest = text::trim(s.substr(open + 3, eol - open - 3));
      if (rest.empty() || rest.find_first_of("{}\"") == std::string::npos) {
        tag = text::to_lower(rest);
        body_start = eol + 1;
      }
    }
    const auto close = s.find(fence, body_start);
    if (close == std::string_view::npos) return std::nullopt;
    blocks.push_back({tag, std::string(s.substr(body_start, close - body_start))});
    pos = close + 3;
  }
  return blocks;
}

bool is_json_blob(const Block& b) {
  if (b.tag == "json") return true;
  if (!b.tag.empty()) return false;
  const auto body = text::trim(b.body);
  return !body.empty() && body.front() == '{';
}

}  // namespace

ReactAction parse_react(std::string_view reply) {
  const auto blocks = fenced_blocks(reply);
  if (!blocks) return ReactAction::malformed("unterminated blob");
  std::vector<const Block*> blobs;
  for (const auto& b : *blocks)
    if (is_json_blob(b)) blobs.push_back(&b);
  if (blobs.empty()) return ReactAction::malformed("no JSON blob");
  if (blobs.size() > 1) return ReactAction::malformed("multiple blobs");

  json j;
  try {
    j = json::parse(blobs.front()->body);
  } catch (const json::parse_error& e) {
    return ReactAction::malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) return ReactAction::malformed("blob is not a JSON object");
  if (!j.contains("action") || !j["action"].is_string())
    return ReactAction::malformed("missing \"action\"");
  const auto action = text::trim(j["action"].get<std::string>());
  if (action.empty()) return ReactAction::malformed("empty \"action\"");

  std::string input;
  if (j.contains("action_input")) {
    const auto& in = j["action_input"];
    input = in.is_string() ? in.get<std::string>() : in.is_null() ? std::string() : in.dump();
  }
  if (text::to_lower(action) == text::to_lower(kFinalAnswerAction))
    return ReactAction::final_answer(std::move(input));
  return ReactAction::tool_call(action, std::move(input));
}

}  // namespace ctfagent
