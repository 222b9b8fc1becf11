#include "ctfagent/challenge.hpp"

#include <unistd.h>

#include <cstdlib>
#include <set>

#include "ctfagent/errors.hpp"
#include "ctfagent/flag.hpp"

namespace ctfagent {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string get_string(const json& j, const char* field, bool required = true) {
  if (!j.contains(field) || j[field].is_null()) {
    if (required) throw ValidationError(field, "missing field");
    return {};
  }
  if (!j[field].is_string()) throw ValidationError(field, "expected a string");
  return j[field].get<std::string>();
}

bool executable_on_path(const std::string& name) {
  const char* path = std::getenv("PATH");
  if (!path) return false;
  std::string_view rest(path);
  while (!rest.empty()) {
    const auto colon = rest.find(':');
    const fs::path dir(std::string(rest.substr(0, colon)));
    if (::access((dir / name).c_str(), X_OK) == 0) return true;
    if (colon == std::string_view::npos) break;
    rest.remove_prefix(colon + 1);
  }
  return false;
}

// First word of the launch command must be a shell builtin, a PATH program or an
// existing file relative to the challenge root.
void check_launch(const std::string& launch, const fs::path& root) {
  static const std::set<std::string> kBuiltins = {"exec", "cd", "env", "sh", "bash", "nohup"};
  const auto t = text::trim(launch);
  const auto word = t.substr(0, t.find_first_of(" \t"));
  if (word.empty()) throw ValidationError("service.launch", "empty command");
  if (kBuiltins.count(word)) return;
  if (word.find('/') != std::string::npos) {
    const fs::path p = fs::path(word).is_absolute() ? fs::path(word) : root / word;
    std::error_code ec;
    if (!fs::exists(p, ec)) throw ValidationError("service.launch", "no such program: " + p.string());
    return;
  }
  if (!executable_on_path(word))
    throw ValidationError("service.launch", "program not found on PATH: " + word);
}

}  // namespace

Challenge challenge_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ValidationError("challenge", "expected a JSON object");
  Challenge c;
  c.id = get_string(j, "id");
  if (c.id.empty()) throw ValidationError("id", "must not be empty");
  c.name = get_string(j, "name", false);
  if (c.name.empty()) c.name = c.id;
  const auto cat = parse_category(get_string(j, "category"));
  if (!cat) throw ValidationError("category", "not one of Web, Pwn, Reverse, Crypto, Forensics, Misc");
  c.category = *cat;
  c.description = get_string(j, "description", false);

  const auto dir = get_string(j, "dir", false);
  c.root = dir.empty() ? base_dir : (fs::path(dir).is_absolute() ? fs::path(dir) : base_dir / dir);
  if (const auto side = get_string(j, "sidecar_dir", false); !side.empty())
    c.sidecar_dir = fs::path(side).is_absolute() ? fs::path(side) : base_dir / side;

  if (j.contains("files")) {
    if (!j["files"].is_array()) throw ValidationError("files", "expected an array");
    for (std::size_t i = 0; i < j["files"].size(); ++i) {
      const auto& f = j["files"][i];
      const auto field = "files[" + std::to_string(i) + "]";
      if (!f.is_string()) throw ValidationError(field, "expected a string");
      const auto rel = f.get<std::string>();
      std::error_code ec;
      if (!fs::exists(c.root / rel, ec))
        throw ValidationError(field, "file not found: " + (c.root / rel).string());
      c.files.push_back(rel);
    }
  }

  if (j.contains("service") && !j["service"].is_null()) {
    const auto& s = j["service"];
    if (!s.is_object()) throw ValidationError("service", "expected an object");
    ServiceSpec svc;
    if (s.contains("host")) svc.host = get_string(s, "host");
    if (!s.contains("port") || !s["port"].is_number_integer())
      throw ValidationError("service.port", "missing or not an integer");
    svc.port = s["port"].get<int>();
    if (svc.port < 1 || svc.port > 65535) throw ValidationError("service.port", "out of range 1-65535");
    svc.launch = get_string(s, "launch", false);
    if (!svc.launch.empty()) check_launch(svc.launch, c.root);
    c.service = std::move(svc);
  }

  if (j.contains("points")) {
    if (!j["points"].is_number_integer()) throw ValidationError("points", "expected an integer");
    c.points = j["points"].get<int>();
    if (c.points < 0) throw ValidationError("points", "must be >= 0");
  }

  c.flag = get_string(j, "flag");
  if (c.flag.empty()) throw ValidationError("flag", "must not be empty");
  c.flag_format = get_string(j, "flag_format");
  try {
    if (!FlagMatcher(c.flag_format).matches(c.flag))
      throw ValidationError("flag", "does not match flag_format " + c.flag_format);
  } catch (const ConfigError& e) {
    throw ValidationError("flag_format", e.what());
  }

  if (j.contains("vulnerability_tags")) {
    if (!j["vulnerability_tags"].is_array())
      throw ValidationError("vulnerability_tags", "expected an array");
    for (const auto& t : j["vulnerability_tags"]) {
      if (!t.is_string()) throw ValidationError("vulnerability_tags", "expected strings");
      auto tag = text::to_lower(text::trim(t.get<std::string>()));
      if (!tag.empty()) c.vulnerability_tags.push_back(std::move(tag));
    }
  }
  return c;
}

json challenge_to_json(const Challenge& c) {
  json j{{"id", c.id},
         {"name", c.name},
         {"category", std::string(to_string(c.category))},
         {"description", c.description},
         {"files", c.files},
         {"points", c.points},
         {"flag", c.flag},
         {"flag_format", c.flag_format},
         {"vulnerability_tags", c.vulnerability_tags},
         {"dir", c.root.string()}};
  if (c.service)
    j["service"] = {{"host", c.service->host}, {"port", c.service->port}, {"launch", c.service->launch}};
  if (c.sidecar_dir) j["sidecar_dir"] = c.sidecar_dir->string();
  return j;
}

}  // namespace ctfagent
