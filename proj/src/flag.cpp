#include "ctfagent/flag.hpp"

#include "ctfagent/errors.hpp"

namespace ctfagent {

FlagMatcher::FlagMatcher(std::string pattern) : pattern_(std::move(pattern)) {
  if (pattern_.empty()) throw ConfigError("flag format must not be empty");
  try {
    re_ = std::regex(pattern_, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw ConfigError("invalid flag format '" + pattern_ + "': " + e.what());
  }
}

std::optional<std::string> FlagMatcher::find(std::string_view text) const {
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, re_)) return std::nullopt;
  return m.str(0);
}

bool FlagMatcher::matches(std::string_view candidate) const {
  return std::regex_match(candidate.begin(), candidate.end(), re_);
}

std::optional<std::string> detect_flag(std::string_view text, const FlagMatcher& format) {
  return format.find(text);
}

}  // namespace ctfagent
