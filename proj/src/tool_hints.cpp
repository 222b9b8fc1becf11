#include "ctfagent/tool_hints.hpp"

#include <json.hpp>

#include "ctfagent/common.hpp"
#include "ctfagent/errors.hpp"

namespace ctfagent {

using nlohmann::json;

std::vector<ToolHint> parse_tool_hints(std::string_view json_text) {
  const auto j = json::parse(json_text);
  if (!j.is_array()) throw ValidationError("hints", "expected a JSON array");
  std::vector<ToolHint> hints;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const auto where = "hints[" + std::to_string(i) + "]";
    if (!e.is_object()) throw ValidationError(where, "expected an object");
    if (!e.contains("tool") || !e["tool"].is_string() || e["tool"].get<std::string>().empty())
      throw ValidationError(where + ".tool", "missing or empty");
    if (!e.contains("hint") || !e["hint"].is_string() || e["hint"].get<std::string>().empty())
      throw ValidationError(where + ".hint", "missing or empty");
    ToolHint h{e["tool"].get<std::string>(), std::nullopt, e["hint"].get<std::string>()};
    if (e.contains("pattern") && !e["pattern"].is_null()) {
      if (!e["pattern"].is_string()) throw ValidationError(where + ".pattern", "expected string or null");
      h.pattern = e["pattern"].get<std::string>();
    }
    hints.push_back(std::move(h));
  }
  return hints;
}

std::vector<ToolHint> load_tool_hints(const std::filesystem::path& path) {
  try {
    return parse_tool_hints(read_file(path));
  } catch (const std::exception& e) {
    throw LoadError(path, 0, e.what());
  }
}

std::optional<std::string> hint_lookup(std::span<const ToolHint> hints, std::string_view tool_name,
                                       std::string_view recent_output) {
  for (const auto& h : hints) {
    if (h.tool_name != tool_name) continue;
    if (h.pattern && recent_output.find(*h.pattern) == std::string_view::npos) continue;
    return h.hint;
  }
  return std::nullopt;
}

}  // namespace ctfagent
