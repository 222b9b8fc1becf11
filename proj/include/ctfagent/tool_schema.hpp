#pragma once

#include <string>

#include <json.hpp>

namespace ctfagent {

/// Function-calling schema offered to the model; `parameters` is a JSON Schema object.
struct ToolSchema {
  std::string name;
  std::string description;
  nlohmann::json parameters;
};

}  // namespace ctfagent
