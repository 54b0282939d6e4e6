#include <gtest/gtest.h>

#include <set>

#include "agentflow/policy.hpp"
#include "agentflow/runner.hpp"
#include "agentflow/scenarios.hpp"
#include "support/oracles.hpp"

using namespace agentflow;
namespace ts = testing_support;

namespace {

CustomOpRegistry make_reg() {
  CustomOpRegistry reg;
  register_scenario_ops(reg);
  return reg;
}

io::InputTrace one_row(std::map<std::string, double> row) {
  io::InputTrace in;
  in.rows[1] = std::move(row);
  in.max_step = 1;
  return in;
}

}  // namespace

// --- fine grain ---------------------------------------------------------------

TEST(FineGrain, EveryFragmentAndTheCompositeValidate) {
  EXPECT_TRUE(report_valid(validate_graph(fig2_graph())));
  auto configs = partition_configs(fig2_graph(), fig2_fine_partition());
  EXPECT_EQ(configs.size(), 5u);
  for (const auto& cfg : configs) {
    EXPECT_TRUE(report_valid(validate_graph(cfg.behavior)));
    EXPECT_EQ(cfg.behavior.actors.size(), 1u);  // fine grain, one operation each
  }
}

TEST(FineGrain, IdentityAssignmentDeliversAtStepThree) {
  CustomOpRegistry reg = make_reg();
  MultiAgentSystem sys = build_fine_grain_system(1, reg, OperatorAssignment::identity);
  RunOutcome out = run_system(sys, one_row({{"I1", 1}, {"I2", 2}, {"I3", 3}, {"I4", 4}}), 100);
  ASSERT_EQ(out.outputs.size(), 1u);
  EXPECT_EQ(std::get<0>(out.outputs[0]), 3u);
}

TEST(FineGrain, TenSeedsIdenticalOutputs) {
  std::set<double> values;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CustomOpRegistry reg = make_reg();
    MultiAgentSystem sys = build_fine_grain_system(seed, reg);
    RunOutcome out = run_system(sys, one_row({{"I1", 1}, {"I2", 2}, {"I3", 3}, {"I4", 4}}), 100);
    ASSERT_EQ(out.outputs.size(), 1u);
    values.insert(std::get<2>(out.outputs[0]));
  }
  EXPECT_EQ(values.size(), 1u);
}

// --- mixed grain ----------------------------------------------------------------

TEST(MixedGrain, GrainRosterIsCoarseFineFineFineCoarse) {
  CustomOpRegistry reg = make_reg();
  MultiAgentSystem sys = build_mixed_grain_system(1, reg);
  EXPECT_EQ(sys.agent("Agent1").config.grain, Grain::coarse);
  EXPECT_EQ(sys.agent("Agent2").config.grain, Grain::fine);
  EXPECT_EQ(sys.agent("Agent3").config.grain, Grain::fine);
  EXPECT_EQ(sys.agent("Agent4").config.grain, Grain::fine);
  EXPECT_EQ(sys.agent("Agent5").config.grain, Grain::coarse);
  EXPECT_GE(sys.agent("Agent1").config.behavior.actors.size(), 2u);
  EXPECT_GE(sys.agent("Agent5").config.behavior.actors.size(), 2u);
  // built by reconfiguring the fine-grain harness
  EXPECT_EQ(sys.trace().count(EventKind::reconfig), 5u);
}

TEST(MixedGrain, MatchesTheUnpartitionedGraphOracle) {
  Rng rng(4242);
  for (int trial = 0; trial < 8; ++trial) {
    std::map<std::string, double> logical;
    for (const char* name : {"I1", "I2", "I3", "I4"})
      logical[name] = std::floor(rng.real(-6, 6));
    // oracle on the composite graph, logical fan-out applied by hand
    std::map<std::string, double> arcs;
    for (const auto& [name, ids] : fig5_env_inputs())
      for (const auto& id : ids) arcs[id] = logical.at(name);
    auto oracle = run_to_quiescence(fig5_graph(), arcs, 77);

    CustomOpRegistry reg = make_reg();
    MultiAgentSystem sys = build_mixed_grain_system(trial + 1, reg);
    RunOutcome out = run_system(sys, one_row(logical), 100);
    ASSERT_EQ(out.outputs.size(), 1u) << "trial " << trial;
    EXPECT_EQ(std::get<2>(out.outputs[0]), oracle.outputs.at("fo")) << "trial " << trial;
  }
}

TEST(MixedGrain, PackingUsesFewerLinksThanAllFine) {
  CustomOpRegistry reg = make_reg();
  MultiAgentSystem mixed = build_mixed_grain_system(1, reg);

  std::vector<AgentPartSpec> all_fine;
  for (const auto& a : fig5_graph().actors)
    all_fine.push_back({"F_" + a.id, Grain::fine, {a.id}});
  MultiAgentSystem fine = build_system(fig5_graph(), all_fine, 1, &reg);

  EXPECT_LT(mixed.link_ids().size(), fine.link_ids().size());
}

// --- control flow -----------------------------------------------------------------

TEST(ControlFlow, BranchAFiresOnlyAgent2) {
  CustomOpRegistry reg = make_reg();
  MultiAgentSystem sys = build_control_flow_system(1, reg);
  RunOutcome out = run_system(sys, one_row({{"event", 5}}), 100);
  auto firings = sys.firing_counts();
  EXPECT_GT(firings["Agent2"], 0u);
  EXPECT_EQ(firings["Agent3"], 0u);
  ASSERT_EQ(out.outputs.size(), 1u);
  EXPECT_EQ(std::get<2>(out.outputs[0]), 5 + 1000 + 10);
}

TEST(ControlFlow, BranchBFiresOnlyAgent3) {
  CustomOpRegistry reg = make_reg();
  MultiAgentSystem sys = build_control_flow_system(1, reg);
  RunOutcome out = run_system(sys, one_row({{"event", -5}}), 100);
  auto firings = sys.firing_counts();
  EXPECT_EQ(firings["Agent2"], 0u);
  EXPECT_GT(firings["Agent3"], 0u);
  ASSERT_EQ(out.outputs.size(), 1u);
  EXPECT_EQ(std::get<2>(out.outputs[0]), -5 + 2000 + 20);
}

TEST(ControlFlow, AlternatingEventsInterleaveInOrder) {
  CustomOpRegistry reg = make_reg();
  MultiAgentSystem sys = build_control_flow_system(1, reg);
  io::InputTrace in;
  in.rows[1] = {{"event", 1}};
  in.rows[2] = {{"event", -2}};
  in.rows[3] = {{"event", 3}};
  in.max_step = 3;
  RunOutcome out = run_system(sys, in, 100);
  ASSERT_EQ(out.outputs.size(), 3u);
  EXPECT_EQ(std::get<2>(out.outputs[0]), 1 + 1010);
  EXPECT_EQ(std::get<2>(out.outputs[1]), -2 + 2020);
  EXPECT_EQ(std::get<2>(out.outputs[2]), 3 + 1010);
}

// --- the HW-Agent function ----------------------------------------------------------

TEST(HwAgentStep, PerceptDecisionActionInThatOrder) {
  AgentMemory memory(16);
  BeliefSet beliefs;
  Rng rng(1);
  DecisionPolicy take_first = [](const AgentMemory&, const BeliefSet&, Rng&) {
    Decision d;
    d.activate = {0};
    return d;
  };
  PerceptRecord percept;
  percept.step = 4;
  percept.source = "environment";
  percept.values = {{"value", 9.0}};
  Decision d = hw_agent_step(percept, memory, take_first, beliefs, rng);
  ASSERT_EQ(d.actions.size(), 1u);
  EXPECT_EQ(d.actions[0].plan_id, 1);
  ASSERT_EQ(memory.size(), 2u);
  EXPECT_EQ(memory.records()[0].kind, MemoryRecord::Kind::percept);
  EXPECT_EQ(memory.records()[1].kind, MemoryRecord::Kind::action);
  EXPECT_EQ(memory.summary_value("last_percept"), 9.0);
}

TEST(HwAgentStep, TandemActivationYieldsTwoActions) {
  AgentMemory memory(16);
  Rng rng(1);
  DecisionPolicy both = [](const AgentMemory&, const BeliefSet&, Rng&) {
    Decision d;
    d.activate = {0, 1};
    return d;
  };
  PerceptRecord percept;
  percept.step = 1;
  percept.values = {{"value", 2.0}};
  Decision d = hw_agent_step(percept, memory, both, {}, rng);
  ASSERT_EQ(d.actions.size(), 2u);
  EXPECT_EQ(d.actions[0].plan_id, 1);
  EXPECT_EQ(d.actions[1].plan_id, 2);
  EXPECT_EQ(memory.size(), 3u);  // percept + both actions
}

TEST(HwAgentStep, NoPerceptMeansNoMemoryUpdate) {
  AgentMemory memory(16);
  Rng rng(1);
  Decision d = hw_agent_step(std::nullopt, memory, default_decision_policy(), {}, rng);
  EXPECT_TRUE(d.actions.empty());
  EXPECT_EQ(memory.size(), 0u);
}

TEST(TimeoutAction, Plan3WhenOp3StatePresent) {
  AgentMemory memory(16);
  memory.set_summary("last_result", 5.0);
  memory.set_summary("last_output", 7.0);
  auto op3 = [](double v) { return std::optional<double>(v + 10); };
  auto rec = timeout_action(memory, 5, 5, op3, 20);
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->plan_id, 3);
  EXPECT_EQ(rec->value, 15.0);
  // the cooperation result was consumed; next timeout degrades to plan 4
  auto rec2 = timeout_action(memory, 5, 5, op3, 25);
  ASSERT_TRUE(rec2);
  EXPECT_EQ(rec2->plan_id, 4);
  EXPECT_EQ(rec2->value, 7.0);
}

TEST(TimeoutAction, Plan4CarriesLastOutput) {
  AgentMemory memory(16);
  memory.set_summary("last_output", 7.0);
  auto rec = timeout_action(memory, 8, 8, nullptr, 3);
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->plan_id, 4);
  EXPECT_EQ(rec->value, 7.0);
}

TEST(TimeoutAction, EmptyMemoryIsATracedNoOp) {
  AgentMemory memory(16);
  EXPECT_FALSE(timeout_action(memory, 9, 8, nullptr, 3));
}

TEST(TimeoutAction, BeforeThresholdIsAPreconditionError) {
  AgentMemory memory(16);
  memory.set_summary("last_output", 7.0);
  EXPECT_THROW(timeout_action(memory, 3, 8, nullptr, 3), Error);
}

// --- the nondeterministic system --------------------------------------------------

TEST(NondetSystem, EveryActionIsOneOfTheFourPlans) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    CustomOpRegistry reg = make_reg();
    MultiAgentSystem sys = build_nondet_system(seed, reg, 4, seed);
    io::InputTrace in;
    in.rows[1] = {{"percept", 3}};
    in.rows[2] = {{"percept", -1}};
    in.rows[3] = {{"percept", 7}};
    in.max_step = 10;
    run_system(sys, in, 300);
    for (const auto& rec : sys.agent("Agent1").memory.records())
      if (rec.kind == MemoryRecord::Kind::action) {
        EXPECT_GE(rec.action.plan_id, 1);
        EXPECT_LE(rec.action.plan_id, 4);
      }
  }
}

TEST(NondetSystem, FixedSeedReplaysTheSameActionSequence) {
  auto actions_of = [](std::uint64_t seed) {
    CustomOpRegistry reg = make_reg();
    MultiAgentSystem sys = build_nondet_system(7, reg, 4, seed);
    io::InputTrace in;
    for (std::uint64_t s = 1; s <= 6; ++s) in.rows[s] = {{"percept", double(s)}};
    in.max_step = 12;
    run_system(sys, in, 300);
    std::vector<std::pair<int, double>> actions;
    for (const auto& rec : sys.agent("Agent1").memory.records())
      if (rec.kind == MemoryRecord::Kind::action)
        actions.emplace_back(rec.action.plan_id, rec.action.value.value_or(-1));
    return actions;
  };
  EXPECT_EQ(actions_of(5), actions_of(5));
  EXPECT_NE(actions_of(5), actions_of(6));
}

TEST(NondetSystem, InputGapBeyondTimeoutProducesAMemoryDerivedAction) {
  CustomOpRegistry reg = make_reg();
  const std::uint64_t T = 4;
  MultiAgentSystem sys = build_nondet_system(3, reg, T, 2);
  // pin the decision so the cooperation result is in memory before the gap
  sys.agent("Agent1").decide = [](const AgentMemory&, const BeliefSet&, Rng&) {
    Decision d;
    d.activate = {0};
    return d;
  };
  io::InputTrace in;
  in.rows[1] = {{"percept", 5}};
  in.max_step = 3 + T + 2;  // cooperation settles by step 3, then a gap > T
  run_system(sys, in, 100);

  std::vector<int> timeout_plans;
  for (const auto& rec : sys.agent("Agent1").memory.records())
    if (rec.kind == MemoryRecord::Kind::action &&
        (rec.action.plan_id == 3 || rec.action.plan_id == 4))
      timeout_plans.push_back(rec.action.plan_id);
  ASSERT_FALSE(timeout_plans.empty()) << "no timeout action inside the gap";
  // plan 3 replays op3 over the remembered op1 result: (5+100)+10
  EXPECT_EQ(timeout_plans.front(), 3);
  bool found = false;
  for (const auto& rec : sys.agent("Agent1").memory.records())
    if (rec.kind == MemoryRecord::Kind::action && rec.action.plan_id == 3) {
      EXPECT_EQ(rec.action.value, 115.0);
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(NondetSystem, FreshAgentTimeoutIsANoOp) {
  CustomOpRegistry reg = make_reg();
  MultiAgentSystem sys = build_nondet_system(3, reg, 3, 2);
  for (int s = 0; s < 8; ++s) sys.step();
  // nothing ever arrived: no action records, a traced no-op instead
  for (const auto& rec : sys.agent("Agent1").memory.records())
    EXPECT_NE(rec.kind, MemoryRecord::Kind::action);
  EXPECT_GE(sys.trace().count(EventKind::stall), 1u);
}
