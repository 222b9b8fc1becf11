#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ctfagent {

struct ToolHint {
  std::string tool_name;
  std::optional<std::string> pattern;  // substring of recent output
  std::string hint;
  friend bool operator==(const ToolHint&, const ToolHint&) = default;
};

/// JSON array of {"tool", "pattern" (string or null), "hint"}.
std::vector<ToolHint> parse_tool_hints(std::string_view json_text);
std::vector<ToolHint> load_tool_hints(const std::filesystem::path& path);

/// First hint whose tool matches and whose pattern (if any) occurs in recent_output.
std::optional<std::string> hint_lookup(std::span<const ToolHint> hints, std::string_view tool_name,
                                       std::string_view recent_output);

}  // namespace ctfagent
