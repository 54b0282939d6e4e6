#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentflow/dfg.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/rng.hpp"
#include "agentflow/trace.hpp"

namespace agentflow {

struct FireOutcome {
  bool ok = true;
  std::string error;  // operator error description when !ok
  // (arc id, value) pairs actually produced, in output-arc order.
  std::vector<std::pair<std::string, double>> produced;
  std::size_t consumed = 0;
  // Extra values the operator attached for tracing.
  std::map<std::string, std::string> event_values;
};

// Live token state of one dataflow graph. Owns arc slots, per-arc sequence
// counters, and custom-operator instances. Single execution context; copy
// of slot state is available for search-style callers.
class GraphRuntime {
 public:
  explicit GraphRuntime(DataflowGraph graph, const CustomOpRegistry* reg = nullptr)
      : graph_(std::move(graph)), reg_(reg) {
    auto report = validate_graph(graph_, reg_);
    if (!report_valid(report))
      raise(Errc::invalid_behavior, report_to_string(report));
    compile();
  }

  const DataflowGraph& graph() const { return graph_; }

  // --- slot access -------------------------------------------------------

  bool has_arc(std::string_view id) const { return arc_index_.count(std::string(id)) != 0; }

  const std::optional<Token>& slot(std::string_view arc) const {
    return slots_[arc_idx(arc)];
  }

  // Environment-side placement. The slot must be empty.
  void place(std::string_view arc, double value) {
    const std::size_t i = arc_idx(arc);
    if (slots_[i])
      raise(Errc::precondition, "arc '" + std::string(arc) + "' already holds a token");
    slots_[i] = Token{value, next_seq_[i]++};
  }

  bool can_place(std::string_view arc) const { return !slots_[arc_idx(arc)]; }

  std::optional<Token> take(std::string_view arc) {
    const std::size_t i = arc_idx(arc);
    std::optional<Token> t = std::move(slots_[i]);
    slots_[i].reset();
    return t;
  }

  bool any_token() const {
    for (const auto& s : slots_)
      if (s) return true;
    return false;
  }

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : slots_)
      if (s) ++n;
    return n;
  }

  std::vector<std::optional<Token>> save_slots() const { return slots_; }
  void restore_slots(std::vector<std::optional<Token>> s) { slots_ = std::move(s); }

  // --- firing rule -------------------------------------------------------

  // True iff every input arc holds a token and every output arc is empty.
  // Merge only needs one input present.
  bool enabled(std::string_view actor) const { return enabled_at(actor_idx(actor)); }

  std::vector<std::string> enabled_actors() const {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (enabled_at(i)) ids.push_back(graph_.actors[i].id);
    return ids;
  }

  // Consume one token per input arc, apply the operation, place results.
  // Operator errors consume the inputs and produce nothing; the outcome
  // reports the error text for the caller's trace.
  FireOutcome fire(std::string_view actor, EvalContext ctx = {}) {
    const std::size_t i = actor_idx(actor);
    if (!enabled_at(i))
      raise(Errc::not_enabled, "actor '" + std::string(actor) + "' is not enabled");
    return fire_at(i, ctx);
  }

  std::uint64_t fire_count() const { return fire_count_; }

  // Fires enabled actors until none remain, selection order drawn from
  // |rng|. Returns false when |max_steps| firings were hit first.
  bool run_to_quiescence(Rng& rng, std::uint64_t max_steps, EvalContext ctx = {},
                         Trace* trace = nullptr, std::uint64_t trace_step = 0,
                         std::string_view subject_prefix = {}) {
    for (std::uint64_t n = 0; n < max_steps; ++n) {
      std::vector<std::size_t> ready;
      for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (enabled_at(i)) ready.push_back(i);
      if (ready.empty()) return true;
      const std::size_t pick = ready[ready.size() == 1 ? 0 : rng.pick(ready.size())];
      FireOutcome out = fire_at(pick, ctx);
      if (trace) {
        std::map<std::string, std::string> vals = std::move(out.event_values);
        vals["actor"] = graph_.actors[pick].id;
        vals["op"] = op_code_name(graph_.actors[pick].op.code);
        for (const auto& [arc, v] : out.produced) vals["out." + arc] = fmt_num(v);
        if (out.ok) {
          trace->add(trace_step, EventKind::fire,
                     std::string(subject_prefix) + graph_.actors[pick].id, std::move(vals));
        } else {
          vals["what"] = out.error;
          trace->add(trace_step, EventKind::error,
                     std::string(subject_prefix) + graph_.actors[pick].id, std::move(vals));
        }
      }
    }
    return false;
  }

 private:
  struct Node {
    std::vector<std::size_t> in;   // arc indices, declared order
    std::vector<std::size_t> out;
  };

  void compile() {
    arc_index_.clear();
    for (std::size_t i = 0; i < graph_.arcs.size(); ++i)
      arc_index_[graph_.arcs[i].id] = i;
    actor_index_.clear();
    nodes_.resize(graph_.actors.size());
    custom_.resize(graph_.actors.size());
    for (std::size_t i = 0; i < graph_.actors.size(); ++i) {
      const ActorSpec& a = graph_.actors[i];
      actor_index_[a.id] = i;
      nodes_[i].in.clear();
      nodes_[i].out.clear();
      for (const auto& id : a.inputs) nodes_[i].in.push_back(arc_index_.at(id));
      for (const auto& id : a.outputs) nodes_[i].out.push_back(arc_index_.at(id));
      if (a.op.code == OpCode::Custom) custom_[i] = reg_->find(a.op.custom_name)->make();
    }
    slots_.assign(graph_.arcs.size(), std::nullopt);
    next_seq_.assign(graph_.arcs.size(), 0);
  }

  std::size_t arc_idx(std::string_view id) const {
    auto it = arc_index_.find(std::string(id));
    if (it == arc_index_.end())
      raise(Errc::precondition, "unknown arc '" + std::string(id) + "'");
    return it->second;
  }

  std::size_t actor_idx(std::string_view id) const {
    auto it = actor_index_.find(std::string(id));
    if (it == actor_index_.end())
      raise(Errc::unknown_actor, "actor '" + std::string(id) + "' not in graph");
    return it->second;
  }

  bool enabled_at(std::size_t i) const {
    const Node& n = nodes_[i];
    for (std::size_t o : n.out)
      if (slots_[o]) return false;
    if (graph_.actors[i].op.code == OpCode::Merge) {
      for (std::size_t in : n.in)
        if (slots_[in]) return true;
      return false;
    }
    for (std::size_t in : n.in)
      if (!slots_[in]) return false;
    return true;
  }

  void emit(std::size_t arc, double value, FireOutcome& out) {
    slots_[arc] = Token{value, next_seq_[arc]++};
    out.produced.emplace_back(graph_.arcs[arc].id, value);
  }

  FireOutcome fire_at(std::size_t i, EvalContext& ctx) {
    const ActorSpec& a = graph_.actors[i];
    const Node& n = nodes_[i];
    FireOutcome out;
    ++fire_count_;

    auto op_error = [&](const std::string& what) {
      out.ok = false;
      out.error = "OperatorError(" + std::string(op_code_name(a.op.code)) + "): " + what;
    };

    if (a.op.code == OpCode::Merge) {
      // Take the first available input; pass it through.
      for (std::size_t in : n.in) {
        if (slots_[in]) {
          const double v = slots_[in]->value;
          slots_[in].reset();
          out.consumed = 1;
          emit(n.out[0], v, out);
          return out;
        }
      }
      raise(Errc::not_enabled, "merge '" + a.id + "' fired with no input");
    }

    // All other kinds consume every input.
    std::vector<double> in;
    in.reserve(n.in.size());
    for (std::size_t idx : n.in) {
      in.push_back(slots_[idx]->value);
      slots_[idx].reset();
    }
    out.consumed = in.size();

    auto finite_or_error = [&](double v) -> bool {
      if (!std::isfinite(v)) {
        op_error("non-finite result");
        return false;
      }
      return true;
    };

    switch (a.op.code) {
      case OpCode::Add:
        if (finite_or_error(in[0] + in[1])) emit(n.out[0], in[0] + in[1], out);
        break;
      case OpCode::Sub:
        if (finite_or_error(in[0] - in[1])) emit(n.out[0], in[0] - in[1], out);
        break;
      case OpCode::Mul:
        if (finite_or_error(in[0] * in[1])) emit(n.out[0], in[0] * in[1], out);
        break;
      case OpCode::Div:
        if (in[1] == 0.0) {
          op_error("division by zero");
        } else if (finite_or_error(in[0] / in[1])) {
          emit(n.out[0], in[0] / in[1], out);
        }
        break;
      case OpCode::Min:
        emit(n.out[0], std::min(in[0], in[1]), out);
        break;
      case OpCode::Max:
        emit(n.out[0], std::max(in[0], in[1]), out);
        break;
      case OpCode::Abs:
        emit(n.out[0], std::fabs(in[0]), out);
        break;
      case OpCode::Square:
        if (finite_or_error(in[0] * in[0])) emit(n.out[0], in[0] * in[0], out);
        break;
      case OpCode::Sqrt:
        if (in[0] < 0.0) {
          op_error("square root of negative value");
        } else {
          emit(n.out[0], std::sqrt(in[0]), out);
        }
        break;
      case OpCode::Avg2:
        if (finite_or_error((in[0] + in[1]) / 2.0)) emit(n.out[0], (in[0] + in[1]) / 2.0, out);
        break;
      case OpCode::Const:
        emit(n.out[0], a.op.constant, out);
        break;
      case OpCode::Identity:
        emit(n.out[0], in[0], out);
        break;
      case OpCode::Switch: {
        // in = (data, control); control == 0 selects the first output arc.
        const std::size_t target = in[1] == 0.0 ? 0 : 1;
        emit(n.out[target], in[0], out);
        break;
      }
      case OpCode::Custom: {
        std::vector<std::optional<double>> results(n.out.size());
        std::map<std::string, std::string> extra;
        EvalContext local = ctx;
        if (!local.event_values) local.event_values = &extra;
        const bool ok = custom_[i]->eval(std::span<const double>(in),
                                         std::span<std::optional<double>>(results), local);
        out.event_values = local.event_values == &extra ? std::move(extra)
                                                        : std::map<std::string, std::string>{};
        if (!ok) {
          out.ok = false;
          out.error = "OperatorError(" + a.op.custom_name + ")";
          break;
        }
        for (std::size_t k = 0; k < results.size(); ++k) {
          if (!results[k]) continue;
          if (!std::isfinite(*results[k])) {
            op_error("non-finite result");
            out.produced.clear();
            break;
          }
          emit(n.out[k], *results[k], out);
        }
        break;
      }
      case OpCode::Merge:
        break;  // handled above
    }
    return out;
  }

  DataflowGraph graph_;
  const CustomOpRegistry* reg_ = nullptr;
  std::map<std::string, std::size_t> arc_index_;
  std::map<std::string, std::size_t> actor_index_;
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<CustomOpInstance>> custom_;
  std::vector<std::optional<Token>> slots_;
  std::vector<std::uint64_t> next_seq_;
  std::uint64_t fire_count_ = 0;
};

// ---------------------------------------------------------------------------
// Whole-graph execution
// ---------------------------------------------------------------------------

enum class RunStatus { quiescent, step_limit };

struct GraphRunResult {
  RunStatus status = RunStatus::quiescent;
  // Final token value per env_output arc; missing entries produced nothing.
  std::map<std::string, double> outputs;
  std::uint64_t firings = 0;
  Trace trace;
  // Actors that never fired; with missing inputs these are the blocked ones.
  std::vector<std::string> never_fired;
};

// Repeatedly fires enabled actors, selection governed by |seed|, until no
// actor is enabled. Each env_input arc may receive at most one initial token.
inline GraphRunResult run_to_quiescence(const DataflowGraph& graph,
                                        const std::map<std::string, double>& env_in,
                                        std::uint64_t seed,
                                        std::uint64_t max_steps = 1'000'000,
                                        const CustomOpRegistry* reg = nullptr) {
  GraphRunResult res;
  res.trace.set_seed(seed);
  GraphRuntime rt(graph, reg);
  for (const auto& [arc, value] : env_in) {
    if (std::find(graph.env_inputs.begin(), graph.env_inputs.end(), arc) ==
        graph.env_inputs.end())
      raise(Errc::precondition, "'" + arc + "' is not an env_input arc");
    rt.place(arc, value);
  }
  for (const auto& arc : graph.env_inputs)
    if (env_in.count(arc))
      res.trace.add(0, EventKind::inject, arc, {{"value", fmt_num(env_in.at(arc))}});

  Rng rng(seed);
  std::map<std::string, bool> fired;
  std::uint64_t steps = 0;
  while (steps < max_steps) {
    auto ready = rt.enabled_actors();
    if (ready.empty()) break;
    const std::string& id = ready[ready.size() == 1 ? 0 : rng.pick(ready.size())];
    FireOutcome out = rt.fire(id);
    fired[id] = true;
    ++steps;
    std::map<std::string, std::string> vals = std::move(out.event_values);
    for (const auto& [arc, v] : out.produced) vals["out." + arc] = fmt_num(v);
    if (out.ok) {
      res.trace.add(steps, EventKind::fire, id, std::move(vals));
    } else {
      vals["what"] = out.error;
      res.trace.add(steps, EventKind::error, id, std::move(vals));
    }
  }
  res.firings = steps;
  if (steps >= max_steps && !rt.enabled_actors().empty()) {
    res.status = RunStatus::step_limit;
  }
  for (const auto& arc : graph.env_outputs) {
    if (auto t = rt.take(arc)) res.outputs[arc] = t->value;
  }
  for (const auto& a : graph.actors) {
    if (!fired[a.id]) {
      res.never_fired.push_back(a.id);
      res.trace.add(res.firings, EventKind::stall, a.id, {{"note", "never-fired"}});
    }
  }
  return res;
}

}  // namespace agentflow
