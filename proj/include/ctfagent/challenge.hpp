#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctfagent/common.hpp"

namespace ctfagent {

struct ServiceSpec {
  std::string host = "127.0.0.1";
  int port = 0;
  std::string launch;  // run in the sandbox before the solve; empty if externally hosted
};

/// One CTF task as described by its manifest.
struct Challenge {
  std::string id;
  std::string name;
  Category category = Category::Misc;
  std::string description;
  std::vector<std::string> files;  // relative to root
  std::optional<ServiceSpec> service;
  int points = 0;
  std::string flag;
  std::string flag_format;
  std::vector<std::string> vulnerability_tags;  // lowercase
  std::filesystem::path root;                   // directory holding the files
  std::optional<std::filesystem::path> sidecar_dir;  // stub decompiler outputs; defaults to root
};

/// Parses and validates one manifest object. Relative paths resolve against `base_dir`.
/// Throws ValidationError naming the offending field.
Challenge challenge_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json challenge_to_json(const Challenge& c);

}  // namespace ctfagent
