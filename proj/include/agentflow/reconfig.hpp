#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "agentflow/beliefs.hpp"
#include "agentflow/dfg.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/rng.hpp"
#include "agentflow/system.hpp"
#include "agentflow/trace.hpp"

namespace agentflow {

namespace detail {

// Canonical one-line-per-field text form of a behavior image. The digest is
// computed over this, so equivalent configurations hash identically.
inline std::string canonical_config_text(const AgentConfig& c) {
  std::string s;
  s += "grain:" + std::string(grain_name(c.grain)) + "\n";
  s += "latency:" + std::to_string(c.compute_latency) + "\n";
  s += "policy:" +
       std::string(c.policy.kind == PolicyKind::deterministic ? "deterministic"
                                                              : "nondeterministic") +
       ":" + std::to_string(c.policy.seed) + ":" + std::to_string(c.policy.timeout) + "\n";
  for (const auto& a : c.behavior.actors) {
    s += "actor:" + a.id + ":" + op_code_name(a.op.code);
    if (a.op.code == OpCode::Const) s += ":" + fmt_num(a.op.constant);
    if (a.op.code == OpCode::Custom) s += ":" + a.op.custom_name;
    s += ":in";
    for (const auto& i : a.inputs) s += "," + i;
    s += ":out";
    for (const auto& o : a.outputs) s += "," + o;
    s += "\n";
  }
  for (const auto& arc : c.behavior.arcs)
    s += "arc:" + arc.id + ":" + arc.producer + ">" + arc.consumer + "\n";
  s += "env_in";
  for (const auto& i : c.behavior.env_inputs) s += ":" + i;
  s += "\nenv_out";
  for (const auto& o : c.behavior.env_outputs) s += ":" + o;
  s += "\n";
  return s;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

// A captured behavior image: everything needed to re-create the agent's
// functionality, and none of its knowledge (beliefs and memory stay with
// the agent across swaps).
struct ConfigurationImage {
  AgentConfig config;
  std::string digest;
};

inline std::string config_digest(const AgentConfig& c) {
  return detail::hex64(fnv1a64(detail::canonical_config_text(c)));
}

// Serializes the agent's behavior into an image. Round-trip stable: applying
// the image reproduces a digest-equal configuration.
inline ConfigurationImage capture_image(const AgentConfig& config,
                                        const CustomOpRegistry* reg = nullptr) {
  auto report = validate_graph(config.behavior, reg);
  if (!report_valid(report))
    raise(Errc::invalid_behavior, report_to_string(report));
  return ConfigurationImage{config, config_digest(config)};
}

class ConfigurationStore {
 public:
  void put(const std::string& name, ConfigurationImage image) {
    if (images_.count(name))
      raise(Errc::precondition, "image name '" + name + "' already stored");
    images_.emplace(name, std::move(image));
  }

  const ConfigurationImage& get(const std::string& name) const {
    auto it = images_.find(name);
    if (it == images_.end()) raise(Errc::precondition, "no image named '" + name + "'");
    return it->second;
  }

  bool has(const std::string& name) const { return images_.count(name) != 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, _] : images_) out.push_back(n);
    return out;
  }

 private:
  std::map<std::string, ConfigurationImage> images_;
};

enum class ReconfigMode { quiescent, forced };

inline const char* reconfig_mode_name(ReconfigMode m) {
  return m == ReconfigMode::quiescent ? "quiescent" : "forced";
}

// Swaps one agent's behavior between system steps. Quiescent mode refuses
// while the agent is mid-transaction (buffered inputs, pending output
// strobes, busy pipeline, or a running intention). Forced mode always
// succeeds; buffered tokens are dropped and accounted in the ledger. No
// other agent's state or links are touched in either mode.
inline void apply_configuration(MultiAgentSystem& sys, const std::string& agent_id,
                                const ConfigurationImage& image, ReconfigMode mode) {
  if (!sys.has_agent(agent_id)) raise(Errc::unknown_agent, "agent '" + agent_id + "'");
  Agent& a = sys.agent(agent_id);

  const std::size_t actor_count = image.config.behavior.actors.size();
  if (image.config.grain == Grain::fine && actor_count != 1)
    raise(Errc::grain_mismatch,
          "fine-grain image has " + std::to_string(actor_count) + " actors");
  if (image.config.grain == Grain::coarse && actor_count < 2)
    raise(Errc::grain_mismatch, "coarse-grain image has fewer than 2 actors");
  if (image.config.behavior.env_inputs.size() != a.config.input_ports.size() ||
      image.config.behavior.env_outputs.size() != a.config.output_ports.size())
    raise(Errc::port_mismatch,
          "image for '" + agent_id + "' expects " +
              std::to_string(image.config.behavior.env_inputs.size()) + " in / " +
              std::to_string(image.config.behavior.env_outputs.size()) +
              " out, agent is wired " + std::to_string(a.config.input_ports.size()) +
              " in / " + std::to_string(a.config.output_ports.size()) + " out");

  if (mode == ReconfigMode::quiescent) {
    bool busy = a.holds_tokens() || a.busy_remaining > 0;
    for (const auto& port : a.config.output_ports)
      if (sys.link(port).strobe) busy = true;
    for (const auto& in : a.intentions)
      if (in.status == IntentionStatus::running) busy = true;
    if (busy)
      raise(Errc::agent_busy, "agent '" + agent_id + "' is mid-transaction");
  }

  MultiAgentSystem::SwapStats stats = sys.swap_behavior(a, image.config);
  sys.add_reconfig_event(
      sys.step_count(), agent_id,
      {{"digest", image.digest},
       {"mode", reconfig_mode_name(mode)},
       {"dropped", std::to_string(stats.dropped_link_tokens)},
       {"dropped_internal", std::to_string(stats.dropped_internal)}});
}

}  // namespace agentflow
