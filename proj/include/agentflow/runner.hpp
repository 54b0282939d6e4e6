#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "agentflow/errors.hpp"
#include "agentflow/io.hpp"
#include "agentflow/reconfig.hpp"
#include "agentflow/system.hpp"

namespace agentflow {

struct RunOutcome {
  // 0 quiescent, 3 step limit, 4 scripted quiescent swap refused
  int exit_code = 0;
  std::string status = "quiescent";
  std::vector<std::tuple<std::uint64_t, std::string, double>> outputs;  // (step, name, value)
  std::optional<std::uint64_t> refused_step;
};

// Drives the system until the input trace is exhausted, all scripted
// reconfigurations have been applied, and the system is quiescent (or the
// step bound is hit). Scripted swaps happen at step boundaries, before the
// step they name; after each one the untouched agents and links are checked
// byte-for-byte against their pre-swap serialization.
inline RunOutcome run_system(MultiAgentSystem& sys, const io::InputTrace& inputs,
                             std::uint64_t max_steps,
                             const std::vector<io::ScriptEntry>& script = {},
                             const ConfigurationStore* images = nullptr) {
  RunOutcome out;
  std::size_t next_script = 0;

  for (std::uint64_t s = sys.step_count() + 1;; s = sys.step_count() + 1) {
    if (s > max_steps) {
      out.exit_code = 3;
      out.status = "step-limit";
      return out;
    }

    while (next_script < script.size() && script[next_script].at_step == s) {
      const io::ScriptEntry& entry = script[next_script];
      if (!images || !images->has(entry.image))
        raise(Errc::precondition, "script names unknown image '" + entry.image + "'");

      std::map<std::string, io::json> before_agents, before_links;
      for (const auto& id : sys.agent_ids())
        if (id != entry.agent) before_agents[id] = io::agent_state_json(sys.agent(id));
      for (const auto& id : sys.link_ids()) {
        const HandshakeLink& l = sys.link(id);
        if (l.producer != entry.agent && l.consumer != entry.agent)
          before_links[id] = io::link_state_json(l);
      }

      try {
        apply_configuration(sys, entry.agent, images->get(entry.image), entry.mode);
      } catch (const Error& e) {
        if (e.code() == Errc::agent_busy) {
          out.exit_code = 4;
          out.status = "reconfig-refused";
          out.refused_step = s;
          return out;
        }
        throw;
      }

      for (const auto& [id, j] : before_agents)
        if (io::agent_state_json(sys.agent(id)) != j)
          raise(Errc::precondition, "reconfiguration of '" + entry.agent +
                                        "' disturbed agent '" + id + "'");
      for (const auto& [id, j] : before_links)
        if (io::link_state_json(sys.link(id)) != j)
          raise(Errc::precondition, "reconfiguration of '" + entry.agent +
                                        "' disturbed link '" + id + "'");
      ++next_script;
    }

    std::map<std::string, double> env;
    auto it = inputs.rows.find(s);
    if (it != inputs.rows.end()) env = it->second;
    StepResult sr = sys.step(env);
    for (const auto& [name, value] : sr.env_outputs)
      out.outputs.emplace_back(sys.step_count(), name, value);

    const bool inputs_done = s >= inputs.max_step;
    const bool script_done = next_script >= script.size();
    if (inputs_done && script_done && sys.quiescent()) return out;
  }
}

}  // namespace agentflow
