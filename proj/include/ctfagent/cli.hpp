#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctfagent {

namespace exit_code {
inline constexpr int kSuccess = 0;
inline constexpr int kUnsolved = 1;
inline constexpr int kUsage = 2;
inline constexpr int kEnvironment = 3;
}  // namespace exit_code

/// Entry point of the ctfagent tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctfagent
