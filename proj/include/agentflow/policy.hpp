#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "agentflow/beliefs.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/rng.hpp"

namespace agentflow {

// Outcome of one decision by a nondeterministic agent: which subordinate
// activation ports to drive this step (0 = first subordinate), plus the
// action records produced. Activating both ports in one step is allowed;
// an empty decision means "do nothing".
struct Decision {
  std::vector<int> activate;
  std::vector<ActionRecord> actions;
};

using DecisionPolicy =
    std::function<Decision(const AgentMemory&, const BeliefSet&, Rng&)>;

// The agent's perceive/decide/remember cycle:
//   memory <- update-mem(memory, percept)   (learning by perception)
//   action <- take-decision(memory)         (decision by its knowledge)
//   memory <- update-mem(memory, action)    (learning by last action)
// With no percept, memory is untouched and the caller's idle accounting
// advances instead.
inline Decision hw_agent_step(const std::optional<PerceptRecord>& percept,
                              AgentMemory& memory, const DecisionPolicy& policy,
                              const BeliefSet& beliefs, Rng& rng) {
  if (!percept) return {};
  memory.record_percept(*percept);
  auto v = percept->values.find("value");
  if (v != percept->values.end()) memory.set_summary("last_percept", v->second);

  Decision d = policy(memory, beliefs, rng);
  for (int port : d.activate) {
    ActionRecord rec;
    rec.step = percept->step;
    rec.plan_id = port == 0 ? 1 : 2;
    if (v != percept->values.end()) rec.value = v->second;
    d.actions.push_back(rec);
  }
  for (const ActionRecord& rec : d.actions) memory.record_action(rec);
  return d;
}

// Fallback action once idle_steps has reached the timeout. Plan 3 replays
// the remembered cooperation result through OP3 and consumes it, so a later
// timeout in the same gap degrades to Plan 4 (last output as-is). With no
// state summary at all there is nothing to present; the caller traces a
// no-op (the EmptyMemory case).
inline std::optional<ActionRecord> timeout_action(
    AgentMemory& memory, std::uint64_t idle_steps, std::uint64_t timeout,
    const std::function<std::optional<double>(double)>& op3, std::uint64_t step) {
  if (idle_steps < timeout)
    raise(Errc::precondition, "timeout_action before the idle threshold");
  if (auto v = memory.summary_value("last_result")) {
    memory.erase_summary("last_result");
    ActionRecord rec;
    rec.step = step;
    rec.plan_id = 3;
    rec.value = op3 ? op3(*v) : std::optional<double>(*v);
    memory.record_action(rec);
    return rec;
  }
  if (auto v = memory.summary_value("last_output")) {
    ActionRecord rec;
    rec.step = step;
    rec.plan_id = 4;
    rec.value = *v;
    memory.record_action(rec);
    return rec;
  }
  return std::nullopt;
}

// Threshold rule over the state summary picks the preferred subordinate;
// a seeded draw occasionally flips it, runs both in tandem, or declines.
inline DecisionPolicy default_decision_policy() {
  return [](const AgentMemory& memory, const BeliefSet& beliefs, Rng& rng) {
    Decision d;
    const double last = memory.summary_value("last_percept").value_or(0.0);
    const auto thr = beliefs.find("decision_threshold");
    const int preferred = last >= (thr == beliefs.end() ? 0.0 : thr->second) ? 0 : 1;
    switch (rng.pick(8)) {
      case 6:
        d.activate = {0, 1};
        break;
      case 7:
        break;  // not activating anything at all
      case 5:
        d.activate = {1 - preferred};
        break;
      default:
        d.activate = {preferred};
        break;
    }
    return d;
  };
}

}  // namespace agentflow
