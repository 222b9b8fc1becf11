#pragma once

#include <optional>
#include <regex>
#include <string>
#include <string_view>

namespace ctfagent {

inline constexpr std::string_view kPicoFlagFormat = R"(picoCTF\{[^}]*\})";

/// A compiled flag-format pattern (ECMAScript regex). An invalid pattern throws
/// ConfigError at construction, never per call.
class FlagMatcher {
 public:
  explicit FlagMatcher(std::string pattern);

  /// Leftmost match in `text`, if any.
  std::optional<std::string> find(std::string_view text) const;
  /// True iff the whole of `candidate` matches.
  bool matches(std::string_view candidate) const;
  const std::string& pattern() const noexcept { return pattern_; }

 private:
  std::string pattern_;
  std::regex re_;
};

std::optional<std::string> detect_flag(std::string_view text, const FlagMatcher& format);

}  // namespace ctfagent
