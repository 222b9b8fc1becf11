#include "ctfagent/environment.hpp"

#include <fmt/core.h>

#include "ctfagent/common.hpp"
#include "ctfagent/errors.hpp"

namespace ctfagent {

using nlohmann::json;

namespace {

// Bare strings bind to the tool's primary parameter.
json normalize_args(std::string_view arguments, const char* primary) {
  if (text::trim(arguments).empty()) return json::object();
  try {
    auto j = json::parse(arguments);
    if (j.is_object()) return j;
    if (j.is_string()) return json{{primary, j.get<std::string>()}};
    if (j.is_number()) return json{{primary, j}};
  } catch (const json::parse_error&) {
  }
  return json{{primary, std::string(arguments)}};
}

std::string str_arg(const json& args, const char* name) {
  if (!args.contains(name)) throw ValidationError(name, "missing argument");
  const auto& v = args.at(name);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError(name, "expected a string");
}

int port_arg(const json& args) {
  const auto& v = args.at("port");
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    try {
      return std::stoi(v.get<std::string>());
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("port", "expected an integer");
}

const char* primary_param(std::string_view tool) {
  if (tool == tools::kTerminal) return "command";
  if (tool == tools::kReadFile) return "path";
  if (tool == tools::kDecompile || tool == tools::kDisassemble) return "binary";
  if (tool == tools::kStartNc) return "address";
  if (tool == tools::kSendLine) return "line";
  return "session_id";
}

}  // namespace

Environment::Environment(Sandbox sandbox, std::vector<ToolHint> hints,
                         std::shared_ptr<const DecompilerBackend> decompiler,
                         std::shared_ptr<const DecompilerBackend> disassembler,
                         EnvironmentConfig config)
    : sandbox_(std::move(sandbox)), hints_(std::move(hints)), decompiler_(std::move(decompiler)),
      disassembler_(std::move(disassembler)), config_(config),
      sessions_(config.read_window, config.max_sessions) {}

ToolOutcome Environment::invoke(std::string_view tool_name, std::string_view arguments) {
  ToolOutcome out;
  const json args = normalize_args(arguments, primary_param(tool_name));
  try {
    if (tool_name == tools::kTerminal)
      out.raw_output = run_terminal(args);
    else if (tool_name == tools::kReadFile)
      out.raw_output = run_read_file(args);
    else if (tool_name == tools::kDecompile)
      out.raw_output = run_decompiler(args, decompiler_.get());
    else if (tool_name == tools::kDisassemble)
      out.raw_output = run_decompiler(args, disassembler_.get());
    else if (tool_name == tools::kStartNc)
      out.raw_output = run_start(args);
    else if (tool_name == tools::kSendLine)
      out.raw_output = run_send(args);
    else if (tool_name == tools::kCloseNc)
      out.raw_output = run_close(args);
    else {
      std::vector<std::string> names;
      for (const auto& s : tool_schemas()) names.push_back(s.name);
      out.raw_output = fmt::format("Error: unknown tool '{}'. Available tools: {}", tool_name,
                                   text::join(names, ", "));
      out.error = true;
    }
  } catch (const EnvironmentError& e) {
    if (!sandbox_.exists()) throw;
    out.raw_output = std::string("Error: ") + e.what();
    out.error = true;
  } catch (const Error& e) {
    out.raw_output = std::string("Error: ") + e.what();
    out.error = true;
  } catch (const json::exception& e) {
    out.raw_output = std::string("Error: bad arguments: ") + e.what();
    out.error = true;
  }
  out.observation = out.raw_output;
  out.tool_hint = hint_lookup(hints_, tool_name, out.raw_output);
  if (out.tool_hint) {
    if (!out.observation.empty() && out.observation.back() != '\n') out.observation += '\n';
    out.observation += "\n[Tool hint] " + *out.tool_hint;
  }
  return out;
}

std::string Environment::run_terminal(const json& args) {
  const auto cmd = str_arg(args, "command");
  const auto r = sandbox_.exec(cmd, config_.command_timeout, config_.output_cap);
  std::string out = r.stdout_text;
  if (!r.stderr_text.empty()) {
    if (!out.empty() && out.back() != '\n') out += '\n';
    out += "[stderr]\n" + r.stderr_text;
  }
  if (!out.empty() && out.back() != '\n') out += '\n';
  if (r.timed_out)
    out += fmt::format("[timed out after {} ms]", config_.command_timeout.count());
  else
    out += fmt::format("[exit code: {}]", r.exit_code);
  return out;
}

std::string Environment::run_read_file(const json& args) {
  const auto path = sandbox_.resolve(str_arg(args, "path"));
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw EnvironmentError("no such file: " + str_arg(args, "path"));
  auto data = read_file(path);
  if (data.find('\0') != std::string::npos)
    return fmt::format("Error: {} is a binary file ({} bytes); inspect it with terminal tools "
                       "or the decompile tool",
                       str_arg(args, "path"), data.size());
  return cap_output(std::move(data), config_.output_cap);
}

std::string Environment::run_decompiler(const json& args, const DecompilerBackend* backend) {
  if (!backend) throw DecompileError("no backend configured for this tool");
  const auto path = sandbox_.resolve(str_arg(args, "binary"));
  return cap_output(decompile(path, *backend), config_.output_cap);
}

std::string Environment::run_start(const json& args) {
  std::string host;
  int port = 0;
  if (args.contains("host")) {
    host = str_arg(args, "host");
    port = port_arg(args);
  } else {
    // "host:port", "host port" or "nc host port"
    auto addr = text::trim(str_arg(args, "address"));
    if (text::istarts_with(addr, "nc ")) addr = text::trim(addr.substr(3));
    const auto sep = addr.find_last_of(": ");
    if (sep == std::string::npos) throw ValidationError("port", "missing port");
    host = text::trim(addr.substr(0, sep));
    port = port_arg(json{{"port", text::trim(addr.substr(sep + 1))}});
  }
  const auto r = sessions_.start(host, port);
  std::string out = fmt::format("Session {} started.\nInitial response:\n{}", r.session_id,
                                r.banner.empty() ? "(no data)" : r.banner);
  if (r.end_of_stream)
    out += fmt::format("\n[connection closed by peer; session {} is closed]", r.session_id);
  return out;
}

std::string Environment::run_send(const json& args) {
  std::string id;
  if (args.contains("session_id")) {
    id = str_arg(args, "session_id");
  } else {
    throw ValidationError("session_id", "missing argument");
  }
  const auto r = sessions_.send_line(id, str_arg(args, "line"));
  std::string out = r.response.empty() ? "(no data)" : r.response;
  if (r.end_of_stream)
    out += fmt::format("\n[connection closed by peer; session {} is closed]", id);
  return out;
}

std::string Environment::run_close(const json& args) {
  const auto id = str_arg(args, "session_id");
  sessions_.close(id);
  return fmt::format("Session {} closed.", id);
}

std::vector<ToolSchema> Environment::tool_schemas() {
  auto obj = [](json props, std::vector<std::string> required) {
    return json{{"type", "object"}, {"properties", std::move(props)}, {"required", required}};
  };
  const json str = {{"type", "string"}};
  return {
      {std::string(tools::kTerminal),
       "Run a shell command in the challenge working directory and return its output.",
       obj({{"command", str}}, {"command"})},
      {std::string(tools::kReadFile), "Read a text file from the challenge working directory.",
       obj({{"path", str}}, {"path"})},
      {std::string(tools::kDecompile), "Decompile a binary into readable C-like pseudocode.",
       obj({{"binary", str}}, {"binary"})},
      {std::string(tools::kDisassemble), "Disassemble a binary.", obj({{"binary", str}}, {"binary"})},
      {std::string(tools::kStartNc),
       "Open an interactive netcat session to host:port and return the initial response.",
       obj({{"host", str}, {"port", {{"type", "integer"}}}}, {"host", "port"})},
      {std::string(tools::kSendLine),
       "Send one line to an open session and return whatever the service answers.",
       obj({{"session_id", str}, {"line", str}}, {"session_id", "line"})},
      {std::string(tools::kCloseNc), "Close an interactive session.",
       obj({{"session_id", str}}, {"session_id"})},
  };
}

}  // namespace ctfagent
