#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentflow/errors.hpp"
#include "agentflow/rng.hpp"

namespace agentflow {

// Reserved endpoint id for arcs that face the environment.
inline constexpr std::string_view kEnv = "env";

// A tagged scalar value traveling on an arc. |seq| increases strictly in
// production order per arc.
struct Token {
  double value = 0.0;
  std::uint64_t seq = 0;
};

// Named numeric working assumptions of an agent.
using BeliefSet = std::map<std::string, double>;

struct BeliefFeedback {
  std::string name;
  double value = 0.0;
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

enum class OpCode {
  Add,
  Sub,
  Mul,
  Div,
  Min,
  Max,
  Abs,
  Square,
  Sqrt,
  Avg2,
  Const,     // consumes a trigger token, emits the configured constant
  Identity,
  Switch,    // inputs (data, control); control == 0 routes to the first
             // output arc, anything else to the second
  Merge,     // fires on either input; first input wins when both are full
  Custom,
};

struct OperatorKind {
  OpCode code = OpCode::Identity;
  double constant = 0.0;     // Const only
  std::string custom_name;   // Custom only

  static OperatorKind basic(OpCode code) { return {code, 0.0, {}}; }
  static OperatorKind konst(double c) { return {OpCode::Const, c, {}}; }
  static OperatorKind custom(std::string name) {
    return {OpCode::Custom, 0.0, std::move(name)};
  }
};

inline const char* op_code_name(OpCode c) {
  switch (c) {
    case OpCode::Add: return "add";
    case OpCode::Sub: return "sub";
    case OpCode::Mul: return "mul";
    case OpCode::Div: return "div";
    case OpCode::Min: return "min";
    case OpCode::Max: return "max";
    case OpCode::Abs: return "abs";
    case OpCode::Square: return "square";
    case OpCode::Sqrt: return "sqrt";
    case OpCode::Avg2: return "avg2";
    case OpCode::Const: return "const";
    case OpCode::Identity: return "identity";
    case OpCode::Switch: return "switch";
    case OpCode::Merge: return "merge";
    case OpCode::Custom: return "custom";
  }
  return "?";
}

inline std::optional<OpCode> op_code_from_name(std::string_view name) {
  static const std::map<std::string_view, OpCode> table = {
      {"add", OpCode::Add},       {"sub", OpCode::Sub},
      {"mul", OpCode::Mul},       {"div", OpCode::Div},
      {"min", OpCode::Min},       {"max", OpCode::Max},
      {"abs", OpCode::Abs},       {"square", OpCode::Square},
      {"sqrt", OpCode::Sqrt},     {"avg2", OpCode::Avg2},
      {"const", OpCode::Const},   {"identity", OpCode::Identity},
      {"switch", OpCode::Switch}, {"merge", OpCode::Merge},
  };
  auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

// Extra affordances an operator evaluation may use. All fields optional;
// pure graph runs pass an empty context.
struct EvalContext {
  const BeliefSet* beliefs = nullptr;
  Rng* rng = nullptr;
  // Named payload attached to the firing's trace event.
  std::map<std::string, std::string>* event_values = nullptr;
  // Belief revisions requested by the operator, routed by the host system.
  std::vector<BeliefFeedback>* feedback = nullptr;
};

// Per-actor evaluation state for custom operators. A fresh instance is made
// for every runtime; behavior images never carry instance state.
class CustomOpInstance {
 public:
  virtual ~CustomOpInstance() = default;

  // One firing. |in| holds one value per input arc in declared order. Write
  // results into |out| (one slot per output arc); slots left empty emit no
  // token. Return false to signal an operator error: inputs stay consumed
  // and no outputs are produced.
  virtual bool eval(std::span<const double> in,
                    std::span<std::optional<double>> out,
                    EvalContext& ctx) = 0;
};

struct CustomOpDef {
  int in_arity = 1;
  int out_arity = 1;
  bool deterministic = true;
  std::function<std::unique_ptr<CustomOpInstance>()> make;
};

class CustomOpRegistry {
 public:
  void add(const std::string& name, CustomOpDef def) { ops_[name] = std::move(def); }

  // Stateless function helper.
  void add_pure(const std::string& name, int in_arity, int out_arity,
                std::function<bool(std::span<const double>,
                                   std::span<std::optional<double>>,
                                   EvalContext&)> fn) {
    class PureOp final : public CustomOpInstance {
     public:
      explicit PureOp(decltype(fn) f) : fn_(std::move(f)) {}
      bool eval(std::span<const double> in, std::span<std::optional<double>> out,
                EvalContext& ctx) override {
        return fn_(in, out, ctx);
      }
     private:
      decltype(fn) fn_;
    };
    auto shared = std::make_shared<decltype(fn)>(std::move(fn));
    ops_[name] = CustomOpDef{in_arity, out_arity, true,
                             [shared] { return std::make_unique<PureOp>(*shared); }};
  }

  const CustomOpDef* find(const std::string& name) const {
    auto it = ops_.find(name);
    return it == ops_.end() ? nullptr : &it->second;
  }

  bool empty() const { return ops_.empty(); }

 private:
  std::map<std::string, CustomOpDef> ops_;
};

// Arity of a kind; Custom arity comes from the registry.
inline int input_arity(const OperatorKind& op, const CustomOpRegistry* reg = nullptr) {
  switch (op.code) {
    case OpCode::Add: case OpCode::Sub: case OpCode::Mul: case OpCode::Div:
    case OpCode::Min: case OpCode::Max: case OpCode::Avg2:
    case OpCode::Switch: case OpCode::Merge:
      return 2;
    case OpCode::Abs: case OpCode::Square: case OpCode::Sqrt:
    case OpCode::Const: case OpCode::Identity:
      return 1;
    case OpCode::Custom: {
      const CustomOpDef* def = reg ? reg->find(op.custom_name) : nullptr;
      if (!def) raise(Errc::unknown_op, "custom operator '" + op.custom_name + "' not registered");
      return def->in_arity;
    }
  }
  return 1;
}

inline int output_arity(const OperatorKind& op, const CustomOpRegistry* reg = nullptr) {
  switch (op.code) {
    case OpCode::Switch:
      return 2;
    case OpCode::Custom: {
      const CustomOpDef* def = reg ? reg->find(op.custom_name) : nullptr;
      if (!def) raise(Errc::unknown_op, "custom operator '" + op.custom_name + "' not registered");
      return def->out_arity;
    }
    default:
      return 1;
  }
}

// ---------------------------------------------------------------------------
// Graph structure
// ---------------------------------------------------------------------------

// Directed capacity-1 channel. Either endpoint may be kEnv.
struct Arc {
  std::string id;
  std::string producer;
  std::string consumer;
};

struct ActorSpec {
  std::string id;
  OperatorKind op;
  std::vector<std::string> inputs;   // arc ids, ordered
  std::vector<std::string> outputs;  // arc ids, ordered
};

struct DataflowGraph {
  std::vector<ActorSpec> actors;
  std::vector<Arc> arcs;
  std::vector<std::string> env_inputs;   // arc ids fed by the environment
  std::vector<std::string> env_outputs;  // arc ids read by the environment
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

enum class ViolationKind {
  NoActors,
  DuplicateId,
  DanglingArc,
  ArityMismatch,
  DuplicateProducer,
  DuplicateConsumer,
  UnknownOperator,
  EnvBindingMismatch,
  UnreachableActor,  // warning
};

inline const char* violation_kind_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::NoActors: return "NoActors";
    case ViolationKind::DuplicateId: return "DuplicateId";
    case ViolationKind::DanglingArc: return "DanglingArc";
    case ViolationKind::ArityMismatch: return "ArityMismatch";
    case ViolationKind::DuplicateProducer: return "DuplicateProducer";
    case ViolationKind::DuplicateConsumer: return "DuplicateConsumer";
    case ViolationKind::UnknownOperator: return "UnknownOperator";
    case ViolationKind::EnvBindingMismatch: return "EnvBindingMismatch";
    case ViolationKind::UnreachableActor: return "UnreachableActor";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::string subject;
  std::string detail;
  bool warning = false;
};

inline bool report_valid(const std::vector<Violation>& report) {
  return std::none_of(report.begin(), report.end(),
                      [](const Violation& v) { return !v.warning; });
}

// Structural check; never modifies the graph. Violations are data.
inline std::vector<Violation> validate_graph(const DataflowGraph& g,
                                             const CustomOpRegistry* reg = nullptr) {
  std::vector<Violation> out;
  auto flag = [&out](ViolationKind k, std::string subject, std::string detail,
                     bool warning = false) {
    out.push_back({k, std::move(subject), std::move(detail), warning});
  };

  if (g.actors.empty()) flag(ViolationKind::NoActors, "graph", "graph has no actors");

  std::map<std::string, const ActorSpec*> actors;
  for (const auto& a : g.actors) {
    if (!actors.emplace(a.id, &a).second)
      flag(ViolationKind::DuplicateId, a.id, "duplicate actor id");
  }
  std::map<std::string, const Arc*> arcs;
  for (const auto& arc : g.arcs) {
    if (!arcs.emplace(arc.id, &arc).second)
      flag(ViolationKind::DuplicateId, arc.id, "duplicate arc id");
  }

  // Producer/consumer sides declared by actors.
  std::map<std::string, std::vector<std::string>> producers, consumers;
  for (const auto& a : g.actors) {
    for (const auto& arcid : a.inputs) {
      if (!arcs.count(arcid)) {
        flag(ViolationKind::DanglingArc, a.id, "input arc '" + arcid + "' not declared");
        continue;
      }
      consumers[arcid].push_back(a.id);
    }
    for (const auto& arcid : a.outputs) {
      if (!arcs.count(arcid)) {
        flag(ViolationKind::DanglingArc, a.id, "output arc '" + arcid + "' not declared");
        continue;
      }
      producers[arcid].push_back(a.id);
    }
  }

  for (const auto& [arcid, who] : producers)
    if (who.size() > 1)
      flag(ViolationKind::DuplicateProducer, arcid, "arc produced by " + std::to_string(who.size()) + " actors");
  for (const auto& [arcid, who] : consumers)
    if (who.size() > 1)
      flag(ViolationKind::DuplicateConsumer, arcid, "arc consumed by " + std::to_string(who.size()) + " actors");

  // Arc endpoint consistency against actor declarations.
  for (const auto& arc : g.arcs) {
    if (arc.producer == kEnv) {
      if (producers.count(arc.id))
        flag(ViolationKind::DuplicateProducer, arc.id, "env-produced arc also produced by actor");
    } else if (!actors.count(arc.producer)) {
      flag(ViolationKind::DanglingArc, arc.id, "producer '" + arc.producer + "' matches no actor");
    } else {
      auto it = producers.find(arc.id);
      if (it == producers.end() ||
          std::find(it->second.begin(), it->second.end(), arc.producer) == it->second.end())
        flag(ViolationKind::DanglingArc, arc.id,
             "producer '" + arc.producer + "' does not list arc as output");
    }
    if (arc.consumer == kEnv) {
      if (consumers.count(arc.id))
        flag(ViolationKind::DuplicateConsumer, arc.id, "env-consumed arc also consumed by actor");
    } else if (!actors.count(arc.consumer)) {
      flag(ViolationKind::DanglingArc, arc.id, "consumer '" + arc.consumer + "' matches no actor");
    } else {
      auto it = consumers.find(arc.id);
      if (it == consumers.end() ||
          std::find(it->second.begin(), it->second.end(), arc.consumer) == it->second.end())
        flag(ViolationKind::DanglingArc, arc.id,
             "consumer '" + arc.consumer + "' does not list arc as input");
    }
  }

  // Operator arity.
  for (const auto& a : g.actors) {
    if (a.op.code == OpCode::Custom && (!reg || !reg->find(a.op.custom_name))) {
      flag(ViolationKind::UnknownOperator, a.id,
           "custom operator '" + a.op.custom_name + "' not registered");
      continue;
    }
    const int want_in = input_arity(a.op, reg);
    const int want_out = output_arity(a.op, reg);
    if (static_cast<int>(a.inputs.size()) != want_in)
      flag(ViolationKind::ArityMismatch, a.id,
           op_code_name(a.op.code) + std::string(" expects ") + std::to_string(want_in) +
               " inputs, has " + std::to_string(a.inputs.size()));
    if (static_cast<int>(a.outputs.size()) != want_out)
      flag(ViolationKind::ArityMismatch, a.id,
           op_code_name(a.op.code) + std::string(" expects ") + std::to_string(want_out) +
               " outputs, has " + std::to_string(a.outputs.size()));
  }

  // Env binding lists must exactly cover the env-side arcs.
  {
    std::map<std::string, int> seen;
    for (const auto& id : g.env_inputs) {
      ++seen[id];
      auto it = arcs.find(id);
      if (it == arcs.end())
        flag(ViolationKind::EnvBindingMismatch, id, "env_inputs lists unknown arc");
      else if (it->second->producer != kEnv)
        flag(ViolationKind::EnvBindingMismatch, id, "env_inputs arc is not env-produced");
    }
    for (const auto& [id, n] : seen)
      if (n > 1) flag(ViolationKind::EnvBindingMismatch, id, "arc listed twice in env_inputs");
    for (const auto& arc : g.arcs)
      if (arc.producer == kEnv && !seen.count(arc.id))
        flag(ViolationKind::EnvBindingMismatch, arc.id, "env-produced arc missing from env_inputs");
  }
  {
    std::map<std::string, int> seen;
    for (const auto& id : g.env_outputs) {
      ++seen[id];
      auto it = arcs.find(id);
      if (it == arcs.end())
        flag(ViolationKind::EnvBindingMismatch, id, "env_outputs lists unknown arc");
      else if (it->second->consumer != kEnv)
        flag(ViolationKind::EnvBindingMismatch, id, "env_outputs arc is not env-consumed");
    }
    for (const auto& [id, n] : seen)
      if (n > 1) flag(ViolationKind::EnvBindingMismatch, id, "arc listed twice in env_outputs");
    for (const auto& arc : g.arcs)
      if (arc.consumer == kEnv && !seen.count(arc.id))
        flag(ViolationKind::EnvBindingMismatch, arc.id, "env-consumed arc missing from env_outputs");
  }

  // Reachability from environment inputs (warning only).
  if (!g.actors.empty() && report_valid(out)) {
    std::map<std::string, std::vector<std::string>> downstream;  // actor -> actors fed
    std::deque<std::string> frontier;
    std::map<std::string, bool> reached;
    for (const auto& id : g.env_inputs) {
      const Arc* arc = arcs.at(id);
      if (arc->consumer != kEnv && !reached[arc->consumer]) {
        reached[arc->consumer] = true;
        frontier.push_back(arc->consumer);
      }
    }
    while (!frontier.empty()) {
      const ActorSpec* a = actors.at(frontier.front());
      frontier.pop_front();
      for (const auto& arcid : a->outputs) {
        const Arc* arc = arcs.at(arcid);
        if (arc->consumer != kEnv && !reached[arc->consumer]) {
          reached[arc->consumer] = true;
          frontier.push_back(arc->consumer);
        }
      }
    }
    for (const auto& a : g.actors)
      if (!reached[a.id])
        flag(ViolationKind::UnreachableActor, a.id,
             "actor not reachable from any environment input", /*warning=*/true);
  }

  return out;
}

inline std::string report_to_string(const std::vector<Violation>& report) {
  std::string s;
  for (const auto& v : report) {
    s += v.warning ? "warning: " : "error: ";
    s += violation_kind_name(v.kind);
    s += " [" + v.subject + "] " + v.detail + "\n";
  }
  return s;
}

}  // namespace agentflow
