#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "agentflow/dfg.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/fusion.hpp"
#include "agentflow/reconfig.hpp"
#include "agentflow/system.hpp"

namespace agentflow {

// The model systems: a fine-grain five-agent pipeline, its mixed-grain
// repacking (Agents 1 and 5 coarse, 2-4 fine), a control/data-flow system,
// a nondeterministic system with timeout fault tolerance, and the
// sensor-fusion pipeline. Node operators for the first four are not pinned
// by any contract; the defaults below can be swapped via the
// operator-assignment arguments.

inline void register_scenario_ops(CustomOpRegistry& reg) {
  // two-input pass-through, used for the timing-only operator assignment
  reg.add_pure("id2", 2, 1,
               [](std::span<const double> in, std::span<std::optional<double>> out,
                  EvalContext&) {
                 out[0] = in[0];
                 return true;
               });
  // event router: nonnegative events take the first branch
  reg.add_pure("route_nonneg", 1, 2,
               [](std::span<const double> in, std::span<std::optional<double>> out,
                  EvalContext&) {
                 out[in[0] >= 0 ? 0 : 1] = in[0];
                 return true;
               });
  auto add_offset = [&reg](const std::string& name, double offset) {
    reg.add_pure(name, 1, 1,
                 [offset](std::span<const double> in,
                          std::span<std::optional<double>> out, EvalContext&) {
                   out[0] = in[0] + offset;
                   return true;
                 });
  };
  // branch-tagging stages of the control-flow model
  add_offset("tag_op1", 1000);
  add_offset("tag_op2", 2000);
  add_offset("tag_op3", 10);
  add_offset("tag_op4", 20);
  // plan stages of the nondeterministic model
  add_offset("plan_op1", 100);
  add_offset("plan_op2", 200);
  add_offset("plan_op3", 10);
}

// ---------------------------------------------------------------------------
// The three-level four-input graph and its partitions
// ---------------------------------------------------------------------------

enum class OperatorAssignment { arithmetic, identity };

// Four environment inputs fan out to three first-level operators; one
// second-level and one third-level operator reduce to a single output.
inline DataflowGraph fig2_graph(OperatorAssignment ops = OperatorAssignment::arithmetic) {
  DataflowGraph g;
  auto arc = [&g](const std::string& id, const std::string& p, const std::string& c) {
    g.arcs.push_back({id, p, c});
  };
  arc("i1", std::string(kEnv), "n1");
  arc("i2a", std::string(kEnv), "n1");
  arc("i2b", std::string(kEnv), "n2");
  arc("i3a", std::string(kEnv), "n2");
  arc("i3b", std::string(kEnv), "n3");
  arc("i4", std::string(kEnv), "n3");
  arc("w1", "n1", "n4");
  arc("w2", "n2", "n4");
  arc("w3", "n3", "n5");
  arc("w4", "n4", "n5");
  arc("o1", "n5", std::string(kEnv));
  const bool ident = ops == OperatorAssignment::identity;
  auto kind = [ident](OpCode code) {
    return ident ? OperatorKind::custom("id2") : OperatorKind::basic(code);
  };
  g.actors.push_back({"n1", kind(OpCode::Add), {"i1", "i2a"}, {"w1"}});
  g.actors.push_back({"n2", kind(OpCode::Sub), {"i2b", "i3a"}, {"w2"}});
  g.actors.push_back({"n3", kind(OpCode::Mul), {"i3b", "i4"}, {"w3"}});
  g.actors.push_back({"n4", kind(OpCode::Min), {"w1", "w2"}, {"w4"}});
  g.actors.push_back({"n5", kind(OpCode::Avg2), {"w3", "w4"}, {"o1"}});
  g.env_inputs = {"i1", "i2a", "i2b", "i3a", "i3b", "i4"};
  g.env_outputs = {"o1"};
  return g;
}

// Four logical inputs I1..I4; I2 and I3 each feed two first-level operators.
inline std::vector<std::pair<std::string, std::vector<std::string>>> fig2_env_inputs() {
  return {{"I1", {"i1"}}, {"I2", {"i2a", "i2b"}}, {"I3", {"i3a", "i3b"}}, {"I4", {"i4"}}};
}

inline std::vector<AgentPartSpec> fig2_fine_partition() {
  return {{"Agent1", Grain::fine, {"n1"}},
          {"Agent2", Grain::fine, {"n2"}},
          {"Agent3", Grain::fine, {"n3"}},
          {"Agent4", Grain::fine, {"n4"}},
          {"Agent5", Grain::fine, {"n5"}}};
}

// Five fine-grain agents, one operator each: agents 1-3 face the
// environment, Agent4 consumes agents 1-2, Agent5 consumes agents 3-4 and
// drives the output.
inline MultiAgentSystem build_fine_grain_system(
    std::uint64_t seed, const CustomOpRegistry& reg,
    OperatorAssignment ops = OperatorAssignment::arithmetic) {
  return build_system(fig2_graph(ops), fig2_fine_partition(), seed, &reg,
                      fig2_env_inputs(), {{"O1", "o1"}});
}

// Seven operators arranged so the same five-agent harness can host them
// with Agents 1 and 5 packing two operators each.
inline DataflowGraph fig5_graph() {
  DataflowGraph g;
  auto arc = [&g](const std::string& id, const std::string& p, const std::string& c) {
    g.arcs.push_back({id, p, c});
  };
  arc("f1", std::string(kEnv), "m1");
  arc("f2", std::string(kEnv), "m1");
  arc("f3", std::string(kEnv), "m3");
  arc("f4", std::string(kEnv), "m3");
  arc("f5", std::string(kEnv), "m4");
  arc("f6", std::string(kEnv), "m4");
  arc("t1", "m1", "m2");
  arc("u1", "m2", "m5");
  arc("u2", "m3", "m5");
  arc("u3", "m4", "m6");
  arc("u4", "m5", "m6");
  arc("t2", "m6", "m7");
  arc("fo", "m7", std::string(kEnv));
  g.actors.push_back({"m1", OperatorKind::basic(OpCode::Sub), {"f1", "f2"}, {"t1"}});
  g.actors.push_back({"m2", OperatorKind::basic(OpCode::Abs), {"t1"}, {"u1"}});
  g.actors.push_back({"m3", OperatorKind::basic(OpCode::Min), {"f3", "f4"}, {"u2"}});
  g.actors.push_back({"m4", OperatorKind::basic(OpCode::Max), {"f5", "f6"}, {"u3"}});
  g.actors.push_back({"m5", OperatorKind::basic(OpCode::Mul), {"u1", "u2"}, {"u4"}});
  g.actors.push_back({"m6", OperatorKind::basic(OpCode::Avg2), {"u3", "u4"}, {"t2"}});
  g.actors.push_back({"m7", OperatorKind::basic(OpCode::Square), {"t2"}, {"fo"}});
  g.env_inputs = {"f1", "f2", "f3", "f4", "f5", "f6"};
  g.env_outputs = {"fo"};
  return g;
}

inline std::vector<std::pair<std::string, std::vector<std::string>>> fig5_env_inputs() {
  return {{"I1", {"f1"}}, {"I2", {"f2", "f3"}}, {"I3", {"f4", "f5"}}, {"I4", {"f6"}}};
}

inline std::vector<AgentPartSpec> fig5_partition() {
  return {{"Agent1", Grain::coarse, {"m1", "m2"}},
          {"Agent2", Grain::fine, {"m3"}},
          {"Agent3", Grain::fine, {"m4"}},
          {"Agent4", Grain::fine, {"m5"}},
          {"Agent5", Grain::coarse, {"m6", "m7"}}};
}

// The mixed-grain system: the fine-grain harness with Agents 1 and 5
// repacked coarse. Constructed exactly as the hardware would be: the
// fine-grain system is built, then every agent is reconfigured from a
// captured image of its slice of the new graph. Link wiring is untouched.
inline MultiAgentSystem build_mixed_grain_system(std::uint64_t seed,
                                                 const CustomOpRegistry& reg) {
  MultiAgentSystem sys = build_fine_grain_system(seed, reg);
  const std::vector<AgentConfig> images = partition_configs(fig5_graph(), fig5_partition());
  for (const AgentConfig& cfg : images)
    apply_configuration(sys, cfg.id, capture_image(cfg, &reg), ReconfigMode::quiescent);
  return sys;
}

// ---------------------------------------------------------------------------
// Control/data flow (three agents)
// ---------------------------------------------------------------------------

// Agent1 routes each environment event to exactly one branch and merges the
// branch results back to the environment; Agent2 runs op1->op3, Agent3 runs
// op2->op4. Nonnegative events take the Agent2 branch.
inline MultiAgentSystem build_control_flow_system(std::uint64_t seed,
                                                  const CustomOpRegistry& reg) {
  DataflowGraph g;
  auto arc = [&g](const std::string& id, const std::string& p, const std::string& c) {
    g.arcs.push_back({id, p, c});
  };
  arc("ev", std::string(kEnv), "route");
  arc("pa", "route", "op1");
  arc("pb", "route", "op2");
  arc("x1", "op1", "op3");
  arc("x2", "op2", "op4");
  arc("ra", "op3", "mrg");
  arc("rb", "op4", "mrg");
  arc("out", "mrg", std::string(kEnv));
  g.actors.push_back({"route", OperatorKind::custom("route_nonneg"), {"ev"}, {"pa", "pb"}});
  g.actors.push_back({"op1", OperatorKind::custom("tag_op1"), {"pa"}, {"x1"}});
  g.actors.push_back({"op3", OperatorKind::custom("tag_op3"), {"x1"}, {"ra"}});
  g.actors.push_back({"op2", OperatorKind::custom("tag_op2"), {"pb"}, {"x2"}});
  g.actors.push_back({"op4", OperatorKind::custom("tag_op4"), {"x2"}, {"rb"}});
  g.actors.push_back({"mrg", OperatorKind::basic(OpCode::Merge), {"ra", "rb"}, {"out"}});
  g.env_inputs = {"ev"};
  g.env_outputs = {"out"};
  std::vector<AgentPartSpec> partition = {
      {"Agent1", Grain::coarse, {"route", "mrg"}},
      {"Agent2", Grain::coarse, {"op1", "op3"}},
      {"Agent3", Grain::coarse, {"op2", "op4"}},
  };
  return build_system(g, partition, seed, &reg, {{"event", {"ev"}}}, {{"O", "out"}});
}

// ---------------------------------------------------------------------------
// Nondeterministic system (three agents)
// ---------------------------------------------------------------------------

// Agent1 perceives, decides, and can activate Agent2 (op1), Agent3 (op2),
// both, or neither; it runs op3 itself on returned results and emits the
// final action. Idle timeouts fall back to remembered state (plans 3/4).
inline MultiAgentSystem build_nondet_system(std::uint64_t seed,
                                            const CustomOpRegistry& reg,
                                            std::uint64_t timeout = 8,
                                            std::uint64_t policy_seed = 1) {
  MultiAgentSystem sys(seed, &reg);

  auto unary_behavior = [](const std::string& actor, const std::string& op) {
    DataflowGraph b;
    b.arcs.push_back({actor + "_in", std::string(kEnv), actor});
    b.arcs.push_back({actor + "_out", actor, std::string(kEnv)});
    b.actors.push_back({actor, OperatorKind::custom(op), {actor + "_in"}, {actor + "_out"}});
    b.env_inputs = {actor + "_in"};
    b.env_outputs = {actor + "_out"};
    return b;
  };

  AgentConfig a1;
  a1.id = "Agent1";
  a1.grain = Grain::fine;
  a1.behavior = unary_behavior("op3", "plan_op3");
  a1.input_ports = {"percept", "res2", "res3"};
  a1.output_ports = {"act2", "act3", "action"};
  a1.policy = {PolicyKind::nondeterministic, policy_seed, timeout};
  sys.add_agent(a1, {{"decision_threshold", 0.0}});

  AgentConfig a2;
  a2.id = "Agent2";
  a2.grain = Grain::fine;
  a2.behavior = unary_behavior("op1", "plan_op1");
  a2.input_ports = {"act2"};
  a2.output_ports = {"res2"};
  sys.add_agent(a2);

  AgentConfig a3;
  a3.id = "Agent3";
  a3.grain = Grain::fine;
  a3.behavior = unary_behavior("op2", "plan_op2");
  a3.input_ports = {"act3"};
  a3.output_ports = {"res3"};
  sys.add_agent(a3);

  sys.add_link("percept", std::string(kEnv), "Agent1");
  sys.add_link("act2", "Agent1", "Agent2");
  sys.add_link("res2", "Agent2", "Agent1");
  sys.add_link("act3", "Agent1", "Agent3");
  sys.add_link("res3", "Agent3", "Agent1");
  sys.add_link("action", "Agent1", std::string(kEnv));
  sys.bind_env_input("percept", {"percept"});
  sys.bind_env_output("action", "action");
  return sys;
}

// ---------------------------------------------------------------------------
// Scenario lookup for the command line
// ---------------------------------------------------------------------------

struct Scenario {
  std::unique_ptr<CustomOpRegistry> registry;
  std::unique_ptr<MultiAgentSystem> system;
  std::vector<std::string> input_columns;
};

inline std::vector<std::string> scenario_names() {
  return {"fig3-fine", "fig5-mixed", "fig6-control", "fig7-nondet", "fig8-fusion"};
}

inline Scenario make_scenario(const std::string& name, std::uint64_t seed,
                              const FusionParams& fusion_params = {},
                              std::uint64_t nondet_timeout = 8) {
  Scenario s;
  s.registry = std::make_unique<CustomOpRegistry>();
  register_scenario_ops(*s.registry);
  if (name == "fig3-fine") {
    s.system = std::make_unique<MultiAgentSystem>(build_fine_grain_system(seed, *s.registry));
    s.input_columns = {"I1", "I2", "I3", "I4"};
  } else if (name == "fig5-mixed") {
    s.system = std::make_unique<MultiAgentSystem>(build_mixed_grain_system(seed, *s.registry));
    s.input_columns = {"I1", "I2", "I3", "I4"};
  } else if (name == "fig6-control") {
    s.system = std::make_unique<MultiAgentSystem>(build_control_flow_system(seed, *s.registry));
    s.input_columns = {"event"};
  } else if (name == "fig7-nondet") {
    s.system = std::make_unique<MultiAgentSystem>(
        build_nondet_system(seed, *s.registry, nondet_timeout));
    s.input_columns = {"percept"};
  } else if (name == "fig8-fusion") {
    register_fusion_ops(*s.registry, fusion_params.window);
    s.system = std::make_unique<MultiAgentSystem>(
        build_fusion_system(fusion_params, seed, *s.registry));
    s.input_columns = {"s1", "s2"};
  } else {
    raise(Errc::precondition, "unknown scenario '" + name + "'");
  }
  return s;
}

}  // namespace agentflow
