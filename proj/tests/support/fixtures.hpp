#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "ctfagent/agent.hpp"
#include "ctfagent/eval.hpp"
#include "ctfagent/knowledge_store.hpp"
#include "ctfagent/prompts.hpp"
#include "ctfagent/tool_hints.hpp"
#include "support/test_servers.hpp"

namespace testsupport {

inline ctfagent::KnowledgeStore fixture_store() {
  const auto dir = fixtures_dir() / "kb";
  return ctfagent::KnowledgeStore::build(ctfagent::read_trunks_file(dir / "trunks.jsonl"),
                                         ctfagent::read_snippets_file(dir / "snippets.jsonl"),
                                         ctfagent::HashingEmbedder());
}

/// Agent plus solve setup wired to the bundled assets and fixture store.
struct SolveRig {
  ctfagent::KnowledgeStore store = fixture_store();
  ctfagent::Agent agent{store, ctfagent::HashingEmbedder(),
                        ctfagent::AgentPrompts::load(assets_dir()), ctfagent::RouterConfig{},
                        ctfagent::HintTemplate::load(ctfagent::hint_template_path(assets_dir()))};
  ctfagent::SolveSetup setup;

  explicit SolveRig(const std::string& work_name) {
    setup.agent = &agent;
    setup.hints = ctfagent::load_tool_hints(ctfagent::tool_hints_path(assets_dir()));
    setup.out_dir = fresh_dir(work_name);
  }
};

/// Factory replaying one script file for every challenge.
inline ctfagent::BackendFactory script_factory(std::filesystem::path script) {
  return [script = std::move(script)](const ctfagent::Challenge&)
             -> std::unique_ptr<ctfagent::ChatBackend> { return ctfagent::load_script(script); };
}

}  // namespace testsupport
