#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctfagent/decompiler.hpp"
#include "ctfagent/net_session.hpp"
#include "ctfagent/sandbox.hpp"
#include "ctfagent/tool_hints.hpp"
#include "ctfagent/tool_schema.hpp"

namespace ctfagent {

struct EnvironmentConfig {
  std::chrono::milliseconds command_timeout = kDefaultCommandTimeout;
  std::size_t output_cap = kDefaultOutputCap;
  ReadWindow read_window{};
  std::size_t max_sessions = 8;
};

struct ToolOutcome {
  std::string observation;              // what the model sees, tool hint included
  std::string raw_output;               // tool output alone
  std::optional<std::string> tool_hint; // verbatim entry from the hints file
  bool error = false;
};

namespace tools {
inline constexpr std::string_view kTerminal = "terminal";
inline constexpr std::string_view kReadFile = "read_file";
inline constexpr std::string_view kDecompile = "decompile";
inline constexpr std::string_view kDisassemble = "disassemble";
inline constexpr std::string_view kStartNc = "start_nc_session";
inline constexpr std::string_view kSendLine = "nc_send_line";
inline constexpr std::string_view kCloseNc = "close_nc_session";
}  // namespace tools

inline constexpr std::string_view kDefaultDisassembleTemplate =
    "objdump -d --no-show-raw-insn {input}";

/// The augmented execution environment of one solve: sandboxed shell, file reads,
/// decompiler plugins and interactive sessions, with tool-use hints attached to outputs.
class Environment {
 public:
  Environment(Sandbox sandbox, std::vector<ToolHint> hints,
              std::shared_ptr<const DecompilerBackend> decompiler,
              std::shared_ptr<const DecompilerBackend> disassembler = nullptr,
              EnvironmentConfig config = {});

  /// Dispatches a tool call. Tool-level failures come back as error observations;
  /// only a vanished sandbox throws (EnvironmentError).
  ToolOutcome invoke(std::string_view tool_name, std::string_view arguments);

  static std::vector<ToolSchema> tool_schemas();

  SessionRegistry& sessions() noexcept { return sessions_; }
  const Sandbox& sandbox() const noexcept { return sandbox_; }
  const std::vector<ToolHint>& hints() const noexcept { return hints_; }

 private:
  std::string run_terminal(const nlohmann::json& args);
  std::string run_read_file(const nlohmann::json& args);
  std::string run_decompiler(const nlohmann::json& args, const DecompilerBackend* backend);
  std::string run_start(const nlohmann::json& args);
  std::string run_send(const nlohmann::json& args);
  std::string run_close(const nlohmann::json& args);

  Sandbox sandbox_;
  std::vector<ToolHint> hints_;
  std::shared_ptr<const DecompilerBackend> decompiler_;
  std::shared_ptr<const DecompilerBackend> disassembler_;
  EnvironmentConfig config_;
  SessionRegistry sessions_;
};

}  // namespace ctfagent
