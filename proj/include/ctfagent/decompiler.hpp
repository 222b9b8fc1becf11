#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>

#include "ctfagent/sandbox.hpp"

namespace ctfagent {

/// Turns a binary into readable pseudocode. Failures throw DecompileError.
class DecompilerBackend {
 public:
  virtual ~DecompilerBackend() = default;
  virtual std::string decompile(const std::filesystem::path& binary) const = 0;
  virtual std::string name() const = 0;
};

/// Stub backend: returns the pre-stored `<binary name>.decomp.txt`, looked up in
/// `sidecar_dir` when given, otherwise next to the binary.
class SidecarDecompiler final : public DecompilerBackend {
 public:
  explicit SidecarDecompiler(std::optional<std::filesystem::path> sidecar_dir = std::nullopt);
  std::string decompile(const std::filesystem::path& binary) const override;
  std::string name() const override { return "sidecar"; }

 private:
  std::optional<std::filesystem::path> sidecar_dir_;
};

/// Runs an external tool. `{input}` in the template is replaced by the shell-quoted path;
/// stdout is the listing and exit 0 means success.
class CommandDecompiler final : public DecompilerBackend {
 public:
  explicit CommandDecompiler(std::string command_template,
                             std::chrono::milliseconds timeout = std::chrono::seconds(120),
                             std::size_t output_cap = 256 * 1024);
  std::string decompile(const std::filesystem::path& binary) const override;
  std::string name() const override { return "command"; }

 private:
  std::string template_;
  std::chrono::milliseconds timeout_;
  std::size_t cap_;
};

/// Checks the input exists, then delegates to the backend.
std::string decompile(const std::filesystem::path& binary, const DecompilerBackend& backend);

}  // namespace ctfagent
