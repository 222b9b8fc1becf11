#include "ctfagent/prompts.hpp"

#include <cstdlib>

#include "ctfagent/common.hpp"
#include "ctfagent/errors.hpp"

#ifndef CTFAGENT_ASSETS_DIR
#define CTFAGENT_ASSETS_DIR "assets"
#endif

namespace ctfagent {

std::filesystem::path default_assets_dir() {
  if (const char* env = std::getenv("CTFAGENT_ASSETS"); env && *env) return env;
  return CTFAGENT_ASSETS_DIR;
}

std::string load_prompt(const std::filesystem::path& assets_dir, std::string_view name) {
  const auto path = assets_dir / "prompts" / (std::string(name) + ".txt");
  try {
    return read_file(path);
  } catch (const std::exception& e) {
    throw LoadError(path, 0, e.what());
  }
}

}  // namespace ctfagent
