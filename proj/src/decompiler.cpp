#include "ctfagent/decompiler.hpp"

#include "ctfagent/common.hpp"
#include "ctfagent/errors.hpp"

namespace ctfagent {

namespace fs = std::filesystem;

SidecarDecompiler::SidecarDecompiler(std::optional<fs::path> sidecar_dir)
    : sidecar_dir_(std::move(sidecar_dir)) {}

std::string SidecarDecompiler::decompile(const fs::path& binary) const {
  const auto name = binary.filename().string() + ".decomp.txt";
  const fs::path sidecar = sidecar_dir_ ? *sidecar_dir_ / name : binary.parent_path() / name;
  std::error_code ec;
  if (!fs::is_regular_file(sidecar, ec))
    throw DecompileError("no decompilation available for " + binary.filename().string() +
                         " (missing " + name + ")");
  return read_file(sidecar);
}

CommandDecompiler::CommandDecompiler(std::string command_template,
                                     std::chrono::milliseconds timeout, std::size_t output_cap)
    : template_(std::move(command_template)), timeout_(timeout), cap_(output_cap) {
  if (template_.find("{input}") == std::string::npos)
    throw ConfigError("decompiler command template lacks an {input} placeholder");
}

std::string CommandDecompiler::decompile(const fs::path& binary) const {
  const auto cmd = text::replace_all(template_, "{input}", shell_quote(binary.string()));
  const fs::path dir = binary.has_parent_path() ? binary.parent_path() : fs::current_path();
  const auto r = exec_command(dir, cmd, timeout_, cap_);
  if (r.timed_out) throw DecompileError("decompiler timed out after " + std::to_string(timeout_.count()) + " ms");
  if (r.exit_code != 0)
    throw DecompileError("decompiler exited with status " + std::to_string(r.exit_code) +
                         (r.stderr_text.empty() ? std::string() : ": " + r.stderr_text));
  return r.stdout_text;
}

std::string decompile(const fs::path& binary, const DecompilerBackend& backend) {
  std::error_code ec;
  if (!fs::is_regular_file(binary, ec))
    throw DecompileError("no such file: " + binary.string());
  return backend.decompile(binary);
}

}  // namespace ctfagent
