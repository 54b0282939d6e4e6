#include <gtest/gtest.h>

#include "agentflow/dfg.hpp"
#include "agentflow/engine.hpp"
#include "agentflow/io.hpp"
#include "support/oracles.hpp"

using namespace agentflow;
namespace ts = testing_support;

namespace {

DataflowGraph single_actor(OpCode code) {
  DataflowGraph g;
  const int in = input_arity(OperatorKind::basic(code));
  ActorSpec a{"n", OperatorKind::basic(code), {}, {"o"}};
  for (int i = 0; i < in; ++i) {
    const std::string id = "in" + std::to_string(i);
    g.arcs.push_back({id, std::string(kEnv), "n"});
    g.env_inputs.push_back(id);
    a.inputs.push_back(id);
  }
  g.arcs.push_back({"o", "n", std::string(kEnv)});
  g.env_outputs = {"o"};
  g.actors.push_back(std::move(a));
  return g;
}

bool has_violation(const std::vector<Violation>& report, ViolationKind kind) {
  for (const auto& v : report)
    if (v.kind == kind) return true;
  return false;
}

}  // namespace

TEST(ValidateGraph, EmptyGraphFlagsNoActors) {
  DataflowGraph g;
  auto report = validate_graph(g);
  EXPECT_TRUE(has_violation(report, ViolationKind::NoActors));
  EXPECT_FALSE(report_valid(report));
}

TEST(ValidateGraph, ThreeLevelScenarioGraphIsClean) {
  DataflowGraph g;
  g.arcs = {{"i1", "env", "n1"}, {"i2a", "env", "n1"}, {"i2b", "env", "n2"},
            {"i3a", "env", "n2"}, {"i3b", "env", "n3"}, {"i4", "env", "n3"},
            {"w1", "n1", "n4"},   {"w2", "n2", "n4"},   {"w3", "n3", "n5"},
            {"w4", "n4", "n5"},   {"o1", "n5", "env"}};
  g.actors = {{"n1", OperatorKind::basic(OpCode::Add), {"i1", "i2a"}, {"w1"}},
              {"n2", OperatorKind::basic(OpCode::Sub), {"i2b", "i3a"}, {"w2"}},
              {"n3", OperatorKind::basic(OpCode::Mul), {"i3b", "i4"}, {"w3"}},
              {"n4", OperatorKind::basic(OpCode::Min), {"w1", "w2"}, {"w4"}},
              {"n5", OperatorKind::basic(OpCode::Avg2), {"w3", "w4"}, {"o1"}}};
  g.env_inputs = {"i1", "i2a", "i2b", "i3a", "i3b", "i4"};
  g.env_outputs = {"o1"};
  EXPECT_TRUE(validate_graph(g).empty());
}

TEST(ValidateGraph, ConsumerMatchingNoActorIsDangling) {
  DataflowGraph g = single_actor(OpCode::Identity);
  g.arcs.push_back({"x", "n", "ghost"});
  auto report = validate_graph(g);
  EXPECT_TRUE(has_violation(report, ViolationKind::DanglingArc));
}

TEST(ValidateGraph, ArityMismatchIsReported) {
  DataflowGraph g = single_actor(OpCode::Add);
  g.actors[0].inputs.pop_back();  // add with one input
  auto report = validate_graph(g);
  EXPECT_TRUE(has_violation(report, ViolationKind::ArityMismatch));
}

TEST(ValidateGraph, TwoProducersOnOneArc) {
  DataflowGraph g = single_actor(OpCode::Identity);
  g.arcs.push_back({"p", "env", "n2"});
  g.env_inputs.push_back("p");
  g.actors.push_back({"n2", OperatorKind::basic(OpCode::Identity), {"p"}, {"o"}});
  auto report = validate_graph(g);
  EXPECT_TRUE(has_violation(report, ViolationKind::DuplicateProducer));
}

TEST(ValidateGraph, UnreachableActorIsWarningOnly) {
  DataflowGraph g = single_actor(OpCode::Identity);
  // a cycle off to the side, fed by nothing
  g.arcs.push_back({"c1", "x1", "x2"});
  g.arcs.push_back({"c2", "x2", "x1"});
  g.actors.push_back({"x1", OperatorKind::basic(OpCode::Identity), {"c2"}, {"c1"}});
  g.actors.push_back({"x2", OperatorKind::basic(OpCode::Identity), {"c1"}, {"c2"}});
  auto report = validate_graph(g);
  EXPECT_TRUE(has_violation(report, ViolationKind::UnreachableActor));
  EXPECT_TRUE(report_valid(report));
}

TEST(ValidateGraph, UnknownCustomOperator) {
  DataflowGraph g = single_actor(OpCode::Identity);
  g.actors[0].op = OperatorKind::custom("nope");
  auto report = validate_graph(g);
  EXPECT_TRUE(has_violation(report, ViolationKind::UnknownOperator));
}

TEST(Enabled, RequiresAllInputsAndEmptyOutputs) {
  GraphRuntime rt(single_actor(OpCode::Add));
  EXPECT_FALSE(rt.enabled("n"));
  rt.place("in0", 2);
  EXPECT_FALSE(rt.enabled("n"));  // one input slot still empty
  rt.place("in1", 3);
  EXPECT_TRUE(rt.enabled("n"));
  rt.fire("n");
  // output slot now occupied
  rt.place("in0", 1);
  rt.place("in1", 1);
  EXPECT_FALSE(rt.enabled("n"));
  rt.take("o");
  EXPECT_TRUE(rt.enabled("n"));
}

TEST(Enabled, UnknownActorRaises) {
  GraphRuntime rt(single_actor(OpCode::Add));
  try {
    rt.enabled("ghost");
    FAIL() << "expected UnknownActor";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_actor);
  }
}

TEST(Fire, AddConsumesInputsAndProducesSum) {
  GraphRuntime rt(single_actor(OpCode::Add));
  rt.place("in0", 2);
  rt.place("in1", 3);
  FireOutcome out = rt.fire("n");
  EXPECT_TRUE(out.ok);
  ASSERT_EQ(out.produced.size(), 1u);
  EXPECT_EQ(out.produced[0].second, 5);
  EXPECT_FALSE(rt.slot("in0"));
  EXPECT_FALSE(rt.slot("in1"));
  ASSERT_TRUE(rt.slot("o"));
  EXPECT_EQ(rt.slot("o")->value, 5);
}

TEST(Fire, DisabledActorRaisesNotEnabled) {
  GraphRuntime rt(single_actor(OpCode::Add));
  try {
    rt.fire("n");
    FAIL() << "expected NotEnabled";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::not_enabled);
  }
}

TEST(Fire, DivByZeroConsumesInputsProducesNothing) {
  GraphRuntime rt(single_actor(OpCode::Div));
  rt.place("in0", 1);
  rt.place("in1", 0);
  FireOutcome out = rt.fire("n");
  EXPECT_FALSE(out.ok);
  EXPECT_NE(out.error.find("OperatorError"), std::string::npos);
  EXPECT_EQ(out.consumed, 2u);
  EXPECT_TRUE(out.produced.empty());
  EXPECT_FALSE(rt.slot("in0"));
  EXPECT_FALSE(rt.slot("o"));
}

TEST(Fire, SqrtOfNegativeIsOperatorError) {
  GraphRuntime rt(single_actor(OpCode::Sqrt));
  rt.place("in0", -1);
  EXPECT_FALSE(rt.fire("n").ok);
}

TEST(Fire, SwitchRoutesOnControl) {
  DataflowGraph g;
  g.arcs = {{"d", "env", "sw"}, {"c", "env", "sw"}, {"t0", "sw", "env"}, {"t1", "sw", "env"}};
  g.actors = {{"sw", OperatorKind::basic(OpCode::Switch), {"d", "c"}, {"t0", "t1"}}};
  g.env_inputs = {"d", "c"};
  g.env_outputs = {"t0", "t1"};
  GraphRuntime rt(g);
  rt.place("d", 9);
  rt.place("c", 0);
  auto out = rt.fire("sw");
  ASSERT_EQ(out.produced.size(), 1u);
  EXPECT_EQ(out.produced[0].first, "t0");
  rt.take("t0");
  rt.place("d", 9);
  rt.place("c", 2);
  out = rt.fire("sw");
  ASSERT_EQ(out.produced.size(), 1u);
  EXPECT_EQ(out.produced[0].first, "t1");
}

TEST(Fire, MergePassesWhicheverInputIsPresent) {
  DataflowGraph g;
  g.arcs = {{"a", "env", "m"}, {"b", "env", "m"}, {"o", "m", "env"}};
  g.actors = {{"m", OperatorKind::basic(OpCode::Merge), {"a", "b"}, {"o"}}};
  g.env_inputs = {"a", "b"};
  g.env_outputs = {"o"};
  GraphRuntime rt(g);
  EXPECT_FALSE(rt.enabled("m"));
  rt.place("b", 7);
  EXPECT_TRUE(rt.enabled("m"));
  auto out = rt.fire("m");
  EXPECT_EQ(out.consumed, 1u);
  EXPECT_EQ(rt.slot("o")->value, 7);
}

TEST(Fire, SequenceNumbersIncreasePerArc) {
  GraphRuntime rt(single_actor(OpCode::Identity));
  rt.place("in0", 1);
  rt.fire("n");
  const std::uint64_t s0 = rt.slot("o")->seq;
  rt.take("o");
  rt.place("in0", 2);
  rt.fire("n");
  EXPECT_GT(rt.slot("o")->seq, s0);
}

TEST(RunToQuiescence, SingleAddIsOneFiring) {
  auto r = run_to_quiescence(single_actor(OpCode::Add), {{"in0", 2}, {"in1", 3}}, 1);
  EXPECT_EQ(r.status, RunStatus::quiescent);
  EXPECT_EQ(r.firings, 1u);
  EXPECT_EQ(r.outputs.at("o"), 5);
}

TEST(RunToQuiescence, ThreeLevelIdentityGraphIsSeedIndependent) {
  CustomOpRegistry reg;
  reg.add_pure("id2", 2, 1,
               [](std::span<const double> in, std::span<std::optional<double>> out,
                  EvalContext&) {
                 out[0] = in[0];
                 return true;
               });
  DataflowGraph g;
  g.arcs = {{"i1", "env", "n1"}, {"i2a", "env", "n1"}, {"i2b", "env", "n2"},
            {"i3a", "env", "n2"}, {"i3b", "env", "n3"}, {"i4", "env", "n3"},
            {"w1", "n1", "n4"},   {"w2", "n2", "n4"},   {"w3", "n3", "n5"},
            {"w4", "n4", "n5"},   {"o1", "n5", "env"}};
  for (const char* id : {"n1", "n2", "n3", "n4", "n5"})
    g.actors.push_back({id, OperatorKind::custom("id2"), {}, {}});
  g.actors[0].inputs = {"i1", "i2a"};
  g.actors[0].outputs = {"w1"};
  g.actors[1].inputs = {"i2b", "i3a"};
  g.actors[1].outputs = {"w2"};
  g.actors[2].inputs = {"i3b", "i4"};
  g.actors[2].outputs = {"w3"};
  g.actors[3].inputs = {"w1", "w2"};
  g.actors[3].outputs = {"w4"};
  g.actors[4].inputs = {"w3", "w4"};
  g.actors[4].outputs = {"o1"};
  g.env_inputs = {"i1", "i2a", "i2b", "i3a", "i3b", "i4"};
  g.env_outputs = {"o1"};

  const std::map<std::string, double> in = {{"i1", 1}, {"i2a", 2}, {"i2b", 2},
                                            {"i3a", 3}, {"i3b", 3}, {"i4", 4}};
  // every firing order reaches the same single outcome
  auto outcomes = ts::enumerate_outcomes(g, in, 200000, &reg);
  EXPECT_EQ(outcomes.size(), 1u);
  auto first = run_to_quiescence(g, in, 0, 1'000'000, &reg);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto r = run_to_quiescence(g, in, seed, 1'000'000, &reg);
    EXPECT_EQ(r.outputs, first.outputs);
  }
}

TEST(RunToQuiescence, MissingInputLeavesDependentsBlocked) {
  auto r = run_to_quiescence(single_actor(OpCode::Add), {{"in0", 2}}, 1);
  EXPECT_EQ(r.firings, 0u);
  EXPECT_TRUE(r.outputs.empty());
  ASSERT_EQ(r.never_fired.size(), 1u);
  EXPECT_EQ(r.never_fired[0], "n");
  EXPECT_EQ(r.trace.count(EventKind::stall), 1u);
}

TEST(RunToQuiescence, CyclicGraphHitsStepLimit) {
  DataflowGraph g;
  g.arcs = {{"seed", "env", "a"}, {"ab", "a", "b"}, {"ba", "b", "a"}};
  g.actors = {{"a", OperatorKind::basic(OpCode::Merge), {"seed", "ba"}, {"ab"}},
              {"b", OperatorKind::basic(OpCode::Identity), {"ab"}, {"ba"}}};
  g.env_inputs = {"seed"};
  g.env_outputs = {};
  auto r = run_to_quiescence(g, {{"seed", 1}}, 1, 100);
  EXPECT_EQ(r.status, RunStatus::step_limit);
}

// Firing conservation: the global token count changes by exactly
// (produced - consumed) per firing, and no slot is ever double-filled.
TEST(Properties, FiringConservationOnRandomGraphs) {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    DataflowGraph g = ts::random_acyclic_graph(rng);
    ASSERT_TRUE(report_valid(validate_graph(g)));
    GraphRuntime rt(g);
    for (const auto& [arc, v] : ts::random_inputs(g, rng)) rt.place(arc, v);
    Rng sched = rng.stream("sched" + std::to_string(trial));
    while (true) {
      auto ready = rt.enabled_actors();
      if (ready.empty()) break;
      const std::size_t before = rt.token_count();
      FireOutcome out = rt.fire(ready[sched.pick(ready.size())]);
      EXPECT_EQ(rt.token_count(), before - out.consumed + out.produced.size());
    }
  }
}

TEST(Properties, SlotsNeverHoldTwoTokens) {
  GraphRuntime rt(single_actor(OpCode::Add));
  rt.place("in0", 1);
  EXPECT_THROW(rt.place("in0", 2), Error);  // capacity-1 discipline
  rt.place("in1", 2);
  rt.fire("n");
  EXPECT_THROW(rt.place("o", 9), Error);
}

TEST(Properties, GraphJsonRoundTripsStructurally) {
  Rng rng(606060);
  for (int trial = 0; trial < 25; ++trial) {
    DataflowGraph g = ts::random_acyclic_graph(rng);
    DataflowGraph back = io::graph_from_json(io::graph_to_json(g), "round-trip");
    ASSERT_EQ(back.actors.size(), g.actors.size());
    ASSERT_EQ(back.arcs.size(), g.arcs.size());
    ASSERT_EQ(back.env_inputs, g.env_inputs);
    ASSERT_EQ(back.env_outputs, g.env_outputs);
    // same semantics, not just same shape
    auto in = ts::random_inputs(g, rng);
    EXPECT_EQ(run_to_quiescence(g, in, 3).outputs, run_to_quiescence(back, in, 3).outputs);
  }
}

TEST(Properties, ConfluenceOnRandomDeterministicGraphs) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    DataflowGraph g = ts::random_acyclic_graph(rng, 6);
    auto in = ts::random_inputs(g, rng);
    auto outcomes = ts::enumerate_outcomes(g, in);
    EXPECT_EQ(outcomes.size(), 1u) << "graph with " << g.actors.size() << " actors diverged";
    EXPECT_EQ(*outcomes.begin(), ts::quiescent_key(g, in, trial * 31 + 1));
  }
}
