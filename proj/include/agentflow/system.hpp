#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agentflow/beliefs.hpp"
#include "agentflow/dfg.hpp"
#include "agentflow/engine.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/policy.hpp"
#include "agentflow/rng.hpp"
#include "agentflow/trace.hpp"

namespace agentflow {

// ---------------------------------------------------------------------------
// Handshake links
// ---------------------------------------------------------------------------

// Single data register between two agents (or an agent and the environment).
// strobe: producer says "data valid". request: consumer says "free and
// ready". The producer never overwrites the register while strobe is set.
struct HandshakeLink {
  std::string id;
  std::string producer;  // agent id or kEnv
  std::string consumer;  // agent id or kEnv
  std::optional<Token> data;
  bool strobe = false;
  bool request = true;
  bool ack = false;  // pulsed on env-facing inputs when the agent ingests
  std::uint64_t next_seq = 0;
  // Conservation ledger. dropped counts delivered tokens later destroyed by
  // a forced reconfiguration, so injected == delivered + occupancy always.
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::deque<double> env_queue;  // staged environment tokens, env-fed links only
};

// Resolve one link: when the producer has valid data and the consumer is
// ready, the token moves out and both flags clear. Request stays down until
// the consumer frees its buffer again.
inline std::optional<Token> transfer(HandshakeLink& link) {
  if (!(link.strobe && link.request && link.data)) return std::nullopt;
  std::optional<Token> t = std::move(link.data);
  link.data.reset();
  link.strobe = false;
  link.request = false;
  ++link.delivered;
  return t;
}

// ---------------------------------------------------------------------------
// Agent configuration and state
// ---------------------------------------------------------------------------

enum class Grain { fine, coarse };

inline const char* grain_name(Grain g) { return g == Grain::fine ? "fine" : "coarse"; }

enum class PolicyKind { deterministic, nondeterministic };

struct PolicySpec {
  PolicyKind kind = PolicyKind::deterministic;
  std::uint64_t seed = 0;
  std::uint64_t timeout = 8;  // idle steps before timeout_action
};

// An agent's behavior image: the dataflow fragment it runs, its grain, the
// ordered port map (port i pairs with behavior.env_inputs[i] / env_outputs[i],
// port names are link ids), latency, and execution policy.
struct AgentConfig {
  std::string id;
  Grain grain = Grain::fine;
  DataflowGraph behavior;
  std::vector<std::string> input_ports;
  std::vector<std::string> output_ports;
  std::uint64_t compute_latency = 1;
  PolicySpec policy;
};

// Live agent: configuration plus BDI state, port buffers, and the running
// behavior fragment.
struct Agent {
  AgentConfig config;
  BeliefSet beliefs;
  DesireSet desires;
  std::vector<Intention> intentions;
  AgentMemory memory;
  std::unique_ptr<GraphRuntime> fragment;

  std::vector<std::optional<Token>> port_in;  // pending-input buffer per port
  std::uint64_t idle_steps = 0;
  std::uint64_t busy_remaining = 0;
  bool done = false;
  bool delivered_this_step = false;

  Rng rng{0};

  // Nondeterministic agents only.
  DecisionPolicy decide;
  std::vector<std::deque<int>> pending_plans;  // per result port, FIFO

  bool nondeterministic() const {
    return config.policy.kind == PolicyKind::nondeterministic;
  }

  bool holds_tokens() const {
    for (const auto& p : port_in)
      if (p) return true;
    return fragment && fragment->any_token();
  }

  // Run the single-actor unary fragment on one value (nondeterministic
  // agents use their fragment as OP3). Returns nothing on operator error.
  std::optional<double> run_unary(double v, Trace* trace, std::uint64_t step) {
    const DataflowGraph& g = fragment->graph();
    if (g.env_inputs.size() != 1 || g.env_outputs.size() != 1 ||
        !fragment->can_place(g.env_inputs[0]))
      return std::nullopt;
    fragment->place(g.env_inputs[0], v);
    EvalContext ctx;
    ctx.beliefs = &beliefs;
    ctx.rng = &rng;
    fragment->run_to_quiescence(rng, 1000, ctx, trace, step, config.id + "/");
    auto t = fragment->take(g.env_outputs[0]);
    if (!t) return std::nullopt;
    return t->value;
  }
};

struct StepResult {
  // (logical output name, value) pairs collected this step, in binding order.
  std::vector<std::pair<std::string, double>> env_outputs;
};

// ---------------------------------------------------------------------------
// Multi-agent system
// ---------------------------------------------------------------------------

// Owns agents, links, and environment bindings. step() is the only mutator.
// One synchronous step: (1) the environment injects tokens where the
// consumer requested, (2) all link transfers resolve, (3) every agent steps
// against the post-transfer state (agents touch only their own state and
// their own output registers, so iteration order is unobservable), then
// belief feedback is routed, (4) environment outputs are collected from
// done-flagged links.
class MultiAgentSystem {
 public:
  explicit MultiAgentSystem(std::uint64_t seed, const CustomOpRegistry* reg = nullptr)
      : seed_(seed), rng_(seed), reg_(reg) {
    trace_.set_seed(seed);
  }

  // --- assembly ----------------------------------------------------------

  // Configure an agent from its behavior image. The fragment must validate;
  // port arity must match the fragment's env arity (deterministic agents);
  // fine grain means exactly one actor. On success the agent is idle with
  // request asserted on every input port.
  Agent& add_agent(AgentConfig config, BeliefSet initial_beliefs = {},
                   DesireSet desires = {}, std::vector<Intention> intentions = {}) {
    if (agents_.count(config.id))
      raise(Errc::precondition, "agent '" + config.id + "' already exists");
    auto report = validate_graph(config.behavior, reg_);
    if (!report_valid(report))
      raise(Errc::invalid_behavior,
            "behavior of '" + config.id + "':\n" + report_to_string(report));
    const std::size_t actor_count = config.behavior.actors.size();
    if (config.grain == Grain::fine && actor_count != 1)
      raise(Errc::grain_mismatch, "fine-grain agent '" + config.id + "' has " +
                                      std::to_string(actor_count) + " actors");
    if (config.grain == Grain::coarse && actor_count < 2)
      raise(Errc::grain_mismatch,
            "coarse-grain agent '" + config.id + "' has fewer than 2 actors");
    if (config.policy.kind == PolicyKind::deterministic) {
      if (config.input_ports.size() != config.behavior.env_inputs.size() ||
          config.output_ports.size() != config.behavior.env_outputs.size())
        raise(Errc::arity_mismatch,
              "port map of '" + config.id + "' does not match behavior env arity");
    } else {
      // Nondeterministic protocol: percept port + one result port per
      // activation port + final output; the fragment itself is the OP3 stage.
      if (config.output_ports.size() < 1 ||
          config.input_ports.size() != config.output_ports.size())
        raise(Errc::arity_mismatch,
              "nondeterministic agent '" + config.id +
                  "' needs ports (percept + results) = (activations + output)");
    }
    if (auto clash = desire_conflicts_.check(desires))
      raise(Errc::precondition, "conflicting desires '" + clash->first + "' and '" +
                                    clash->second + "' on agent '" + config.id + "'");

    auto agent = std::make_unique<Agent>();
    agent->config = std::move(config);
    agent->beliefs = std::move(initial_beliefs);
    agent->desires = std::move(desires);
    agent->intentions = std::move(intentions);
    agent->fragment = std::make_unique<GraphRuntime>(agent->config.behavior, reg_);
    agent->port_in.assign(agent->config.input_ports.size(), std::nullopt);
    agent->rng = rng_.stream("agent/" + agent->config.id +
                             (agent->nondeterministic()
                                  ? "/policy/" + std::to_string(agent->config.policy.seed)
                                  : ""));
    if (agent->nondeterministic()) {
      agent->decide = default_decision_policy();
      agent->pending_plans.assign(agent->config.input_ports.size(), {});
    }
    Agent& ref = *agent;
    agents_.emplace(ref.config.id, std::move(agent));
    return ref;
  }

  void add_link(const std::string& id, const std::string& producer,
                const std::string& consumer) {
    if (links_.count(id)) raise(Errc::precondition, "link '" + id + "' already exists");
    if (producer != kEnv && !agents_.count(producer))
      raise(Errc::unknown_agent, "link '" + id + "' producer '" + producer + "'");
    if (consumer != kEnv && !agents_.count(consumer))
      raise(Errc::unknown_agent, "link '" + id + "' consumer '" + consumer + "'");
    HandshakeLink l;
    l.id = id;
    l.producer = producer;
    l.consumer = consumer;
    links_.emplace(id, std::move(l));
  }

  void bind_env_input(const std::string& name, std::vector<std::string> link_ids) {
    for (const auto& id : link_ids) {
      const HandshakeLink& l = link(id);
      if (l.producer != kEnv)
        raise(Errc::precondition, "env input '" + name + "' bound to non-env link '" + id + "'");
    }
    env_inputs_.emplace_back(name, std::move(link_ids));
  }

  void bind_env_output(const std::string& name, const std::string& link_id) {
    const HandshakeLink& l = link(link_id);
    if (l.consumer != kEnv)
      raise(Errc::precondition, "env output '" + name + "' bound to non-env link '" + link_id + "'");
    env_outputs_.emplace_back(name, link_id);
  }

  // Belief revisions |name| sent by |from| are applied to every agent in
  // |targets| at the end of the step.
  void add_belief_route(const std::string& from, const std::string& name,
                        std::vector<std::string> targets) {
    belief_routes_[{from, name}] = std::move(targets);
  }

  void set_desire_conflicts(DesireConflictTable t) { desire_conflicts_ = std::move(t); }

  // --- queries -----------------------------------------------------------

  Agent& agent(const std::string& id) {
    auto it = agents_.find(id);
    if (it == agents_.end()) raise(Errc::unknown_agent, "agent '" + id + "'");
    return *it->second;
  }
  const Agent& agent(const std::string& id) const {
    auto it = agents_.find(id);
    if (it == agents_.end()) raise(Errc::unknown_agent, "agent '" + id + "'");
    return *it->second;
  }
  bool has_agent(const std::string& id) const { return agents_.count(id) != 0; }

  HandshakeLink& link(const std::string& id) {
    auto it = links_.find(id);
    if (it == links_.end()) raise(Errc::unknown_link, "link '" + id + "'");
    return it->second;
  }
  const HandshakeLink& link(const std::string& id) const {
    auto it = links_.find(id);
    if (it == links_.end()) raise(Errc::unknown_link, "link '" + id + "'");
    return it->second;
  }

  std::vector<std::string> agent_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : agents_) ids.push_back(id);
    return ids;
  }
  std::vector<std::string> link_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : links_) ids.push_back(id);
    return ids;
  }

  const std::vector<std::pair<std::string, std::vector<std::string>>>& env_input_bindings() const {
    return env_inputs_;
  }
  const std::vector<std::pair<std::string, std::string>>& env_output_bindings() const {
    return env_outputs_;
  }

  std::uint64_t step_count() const { return step_; }
  std::uint64_t seed() const { return seed_; }
  const CustomOpRegistry* registry() const { return reg_; }
  Trace& trace() { return trace_; }
  const Trace& trace() const { return trace_; }
  std::optional<std::uint64_t> first_output_step() const { return first_output_step_; }

  std::map<std::string, std::uint64_t> firing_counts() const { return firings_; }

  // Test hook: overrides the (sorted) iteration order of phase 3.
  void set_agent_step_order(std::vector<std::string> order) {
    step_order_ = std::move(order);
  }

  // --- conservation ledger -----------------------------------------------

  std::uint64_t tokens_injected() const {
    std::uint64_t n = 0;
    for (const auto& [_, l] : links_) n += l.injected;
    return n;
  }
  std::uint64_t tokens_delivered() const {  // net of reconfig drops
    std::uint64_t n = 0;
    for (const auto& [_, l] : links_) n += l.delivered - l.dropped;
    return n;
  }
  std::uint64_t tokens_in_flight() const {
    std::uint64_t n = 0;
    for (const auto& [_, l] : links_) n += l.data ? 1 : 0;
    return n;
  }
  std::uint64_t tokens_reconfig_dropped() const {
    std::uint64_t n = 0;
    for (const auto& [_, l] : links_) n += l.dropped;
    return n;
  }

  bool conservation_ok() const {
    for (const auto& [_, l] : links_) {
      if (l.injected != l.delivered + (l.data ? 1 : 0)) return false;
      if (l.dropped > l.delivered) return false;
    }
    return true;
  }

  // No staged env tokens, empty registers, empty buffers, no busy agents.
  bool quiescent() const {
    for (const auto& [_, l] : links_)
      if (l.data || !l.env_queue.empty()) return false;
    for (const auto& [_, a] : agents_)
      if (a->holds_tokens() || a->busy_remaining > 0) return false;
    return true;
  }

  // --- the synchronous step ----------------------------------------------

  StepResult step(const std::map<std::string, double>& env_values = {}) {
    ++step_;
    StepResult result;

    for (auto& [_, a] : agents_) {
      a->done = false;
      a->delivered_this_step = false;
    }
    for (auto& [_, l] : links_) l.ack = false;

    // (1) environment injection where the consumer requested
    for (const auto& [name, value] : env_values) {
      bool known = false;
      for (auto& [bname, ids] : env_inputs_) {
        if (bname != name) continue;
        known = true;
        for (const auto& id : ids) links_.at(id).env_queue.push_back(value);
      }
      if (!known)
        raise(Errc::precondition, "no env input binding named '" + name + "'");
    }
    for (auto& [id, l] : links_) {
      if (l.producer != kEnv || l.env_queue.empty()) continue;
      if (!l.strobe && l.request) {
        place_on_link(l, l.env_queue.front());
        l.env_queue.pop_front();
        trace_.add(step_, EventKind::inject, id,
                   {{"value", fmt_num(l.data->value)}, {"to", l.consumer}});
      }
    }

    // (2) transfers into consumer buffers
    for (auto& [id, l] : links_) {
      if (l.consumer == kEnv) continue;  // collected in phase 4
      const std::string from = l.producer;
      if (auto t = transfer(l)) {
        Agent& c = *agents_.at(l.consumer);
        const std::size_t port = port_index(c, id);
        c.port_in[port] = *t;
        c.delivered_this_step = true;
        c.idle_steps = 0;
        // Nondeterministic agents record their env percept themselves inside
        // hw_agent_step; everything else is remembered at delivery.
        if (!(c.nondeterministic() && port == 0)) {
          PerceptRecord rec;
          rec.step = step_;
          rec.source = from == kEnv ? "environment" : from;
          rec.values = {{"value", t->value}, {"port", static_cast<double>(port)}};
          c.memory.record_percept(std::move(rec));
        }
        trace_.add(step_, EventKind::transfer, id,
                   {{"value", fmt_num(t->value)},
                    {"from", from},
                    {"to", l.consumer}});
      }
    }

    // (3) agents step; each touches only itself and its output registers
    feedback_.clear();
    if (step_order_.empty()) {
      for (auto& [_, a] : agents_) step_agent(*a);
    } else {
      for (const auto& id : step_order_) step_agent(agent(id));
    }

    // route belief feedback deterministically
    std::stable_sort(feedback_.begin(), feedback_.end(), [](const auto& x, const auto& y) {
      return std::tie(x.first, x.second.name) < std::tie(y.first, y.second.name);
    });
    for (const auto& [from, fb] : feedback_) {
      std::vector<std::string> targets{from};
      auto it = belief_routes_.find({from, fb.name});
      if (it != belief_routes_.end()) targets = it->second;
      for (const auto& target : targets) {
        Agent& t = agent(target);
        update_beliefs(t.beliefs, {{fb.name, fb.value}});
        trace_.add(step_, EventKind::belief, target,
                   {{fb.name, fmt_num(fb.value)}, {"from", from}});
      }
    }

    // (4) environment collects from done-flagged env-facing links
    for (const auto& [name, id] : env_outputs_) {
      HandshakeLink& l = links_.at(id);
      if (!l.strobe || !l.data) continue;
      const double v = l.data->value;
      l.data.reset();
      l.strobe = false;
      ++l.delivered;
      result.env_outputs.emplace_back(name, v);
      if (!first_output_step_) first_output_step_ = step_;
      trace_.add(step_, EventKind::transfer, id,
                 {{"value", fmt_num(v)}, {"from", l.producer}, {"to", std::string(kEnv)}});
    }
    return result;
  }

  // --- reconfiguration mechanics (policy checks live in reconfig.hpp) -----

  struct SwapStats {
    std::uint64_t dropped_link_tokens = 0;   // from port buffers + boundary arcs
    std::uint64_t dropped_internal = 0;      // fragment-internal intermediates
  };

  // Replace the agent's behavior in place, preserving beliefs, desires,
  // intentions, and memory. Buffered tokens are dropped into the ledger
  // (forced mode only; quiescent callers verified emptiness already).
  SwapStats swap_behavior(Agent& a, const AgentConfig& image) {
    // Validate the incoming behavior before touching anything.
    auto next_fragment = std::make_unique<GraphRuntime>(image.behavior, reg_);
    SwapStats stats;
    for (std::size_t i = 0; i < a.port_in.size(); ++i) {
      if (a.port_in[i]) {
        a.port_in[i].reset();
        ++links_.at(a.config.input_ports[i]).dropped;
        ++stats.dropped_link_tokens;
      }
      links_.at(a.config.input_ports[i]).request = true;
    }
    const DataflowGraph& old = a.fragment->graph();
    for (const auto& arc : old.arcs) {
      if (!a.fragment->slot(arc.id)) continue;
      const bool boundary_in =
          std::find(old.env_inputs.begin(), old.env_inputs.end(), arc.id) !=
          old.env_inputs.end();
      if (boundary_in) {
        // entered through the matching port's link; unwind its delivery
        const std::size_t port =
            std::find(old.env_inputs.begin(), old.env_inputs.end(), arc.id) -
            old.env_inputs.begin();
        ++links_.at(a.config.input_ports[port]).dropped;
        ++stats.dropped_link_tokens;
      } else {
        ++stats.dropped_internal;
      }
    }
    AgentConfig next = image;
    next.id = a.config.id;
    next.input_ports = a.config.input_ports;    // wiring is the agent's, not the image's
    next.output_ports = a.config.output_ports;
    a.config = std::move(next);
    a.fragment = std::move(next_fragment);
    a.idle_steps = 0;
    a.busy_remaining = 0;
    a.done = false;
    a.rng = rng_.stream("agent/" + a.config.id +
                        (a.nondeterministic()
                             ? "/policy/" + std::to_string(a.config.policy.seed)
                             : ""));
    if (a.nondeterministic()) {
      if (!a.decide) a.decide = default_decision_policy();
      a.pending_plans.assign(a.config.input_ports.size(), {});
    } else {
      a.decide = nullptr;
      a.pending_plans.clear();
    }
    return stats;
  }

  void add_reconfig_event(std::uint64_t step, std::string subject,
                          std::map<std::string, std::string> values) {
    trace_.add(step, EventKind::reconfig, std::move(subject), std::move(values));
  }

 private:
  std::size_t port_index(const Agent& a, const std::string& link_id) const {
    auto it = std::find(a.config.input_ports.begin(), a.config.input_ports.end(), link_id);
    if (it == a.config.input_ports.end())
      raise(Errc::port_mismatch,
            "agent '" + a.config.id + "' has no input port for link '" + link_id + "'");
    return static_cast<std::size_t>(it - a.config.input_ports.begin());
  }

  void place_on_link(HandshakeLink& l, double value) {
    if (l.strobe || l.data)
      raise(Errc::precondition, "link '" + l.id + "' register overwritten while strobe set");
    l.data = Token{value, l.next_seq++};
    l.strobe = true;
    ++l.injected;
  }

  void step_agent(Agent& a) {
    if (!a.delivered_this_step && !a.holds_tokens() && a.busy_remaining == 0)
      ++a.idle_steps;
    if (a.nondeterministic()) {
      policy_step(a);
    } else {
      dataflow_step(a);
    }
  }

  // --- deterministic dataflow agents --------------------------------------

  void dataflow_step(Agent& a) {
    if (a.busy_remaining > 0) {
      if (--a.busy_remaining == 0) emit_ready(a);
      return;
    }
    bool outputs_free = true;
    for (const auto& port : a.config.output_ports)
      if (links_.at(port).strobe) outputs_free = false;
    if (!outputs_free) {
      if (a.holds_tokens())
        trace_.add(step_, EventKind::stall, a.config.id, {{"note", "backpressure"}});
      return;
    }

    inject_ports(a);

    const std::uint64_t before = a.fragment->fire_count();
    EvalContext ctx;
    ctx.beliefs = &a.beliefs;
    ctx.rng = &a.rng;
    ctx.feedback = &agent_feedback_;
    agent_feedback_.clear();
    if (!a.fragment->run_to_quiescence(a.rng, kFragmentRunBound, ctx, &trace_, step_,
                                       a.config.id + "/"))
      trace_.add(step_, EventKind::error, a.config.id, {{"what", "fragment step limit"}});
    for (auto& fb : agent_feedback_) feedback_.emplace_back(a.config.id, std::move(fb));
    agent_feedback_.clear();
    const std::uint64_t fired = a.fragment->fire_count() - before;
    firings_[a.config.id] += fired;

    if (fired > 0 && a.config.compute_latency > 1) {
      a.busy_remaining = a.config.compute_latency - 1;
      return;
    }
    emit_ready(a);
  }

  void inject_ports(Agent& a) {
    const auto& frag_in = a.fragment->graph().env_inputs;
    for (std::size_t i = 0; i < a.port_in.size(); ++i) {
      if (!a.port_in[i]) continue;
      if (!a.fragment->can_place(frag_in[i])) continue;
      a.fragment->place(frag_in[i], a.port_in[i]->value);
      a.port_in[i].reset();
      HandshakeLink& l = links_.at(a.config.input_ports[i]);
      l.request = true;  // free and ready for the next token
      if (l.producer == kEnv) l.ack = true;  // input tokens received
    }
  }

  void emit_ready(Agent& a) {
    const auto& frag_out = a.fragment->graph().env_outputs;
    std::map<std::string, std::string> sent;
    for (std::size_t j = 0; j < a.config.output_ports.size(); ++j) {
      HandshakeLink& l = links_.at(a.config.output_ports[j]);
      if (l.strobe) continue;
      if (!a.fragment->slot(frag_out[j])) continue;
      const double v = a.fragment->take(frag_out[j])->value;
      place_on_link(l, v);
      sent[l.id] = fmt_num(v);
      ActionRecord rec;
      rec.step = step_;
      rec.value = v;
      a.memory.record_action(rec);
      a.memory.set_summary("last_output", v);
    }
    if (!sent.empty()) {
      a.done = true;
      trace_.add(step_, EventKind::done, a.config.id, std::move(sent));
    }
  }

  // --- nondeterministic agents (percept port 0, result ports 1..n;
  //     activation ports 0..n-1, final output port last) ------------------

  void policy_step(Agent& a) {
    const std::size_t n_out = a.config.output_ports.size();
    const std::string& out_port = a.config.output_ports[n_out - 1];
    bool outputs_free = true;
    for (const auto& port : a.config.output_ports)
      if (links_.at(port).strobe) outputs_free = false;
    if (!outputs_free) {
      if (a.holds_tokens())
        trace_.add(step_, EventKind::stall, a.config.id, {{"note", "backpressure"}});
      return;
    }

    std::map<std::string, std::string> sent;
    bool out_used = false;

    // Finished cooperations first: run the result through the OP3 fragment.
    for (std::size_t i = 1; i < a.port_in.size(); ++i) {
      if (!a.port_in[i] || out_used) continue;
      const double w = a.port_in[i]->value;
      a.port_in[i].reset();
      links_.at(a.config.input_ports[i]).request = true;
      int plan = 0;
      if (!a.pending_plans[i].empty()) {
        plan = a.pending_plans[i].front();
        a.pending_plans[i].pop_front();
      }
      a.memory.set_summary("last_result", w);
      std::optional<double> v = a.run_unary(w, &trace_, step_);
      firings_[a.config.id] += 1;
      if (!v) {
        trace_.add(step_, EventKind::error, a.config.id,
                   {{"what", "OperatorError in plan stage"}, {"plan", std::to_string(plan)}});
        continue;
      }
      emit_policy_output(a, out_port, *v, plan, sent);
      out_used = true;
    }

    if (a.port_in[0]) {
      // New percept: perceive, decide, activate.
      const double v = a.port_in[0]->value;
      a.port_in[0].reset();
      HandshakeLink& in = links_.at(a.config.input_ports[0]);
      in.request = true;
      if (in.producer == kEnv) in.ack = true;

      PerceptRecord percept;
      percept.step = step_;
      percept.source = in.producer == kEnv ? "environment" : in.producer;
      percept.values = {{"value", v}};
      Decision d = hw_agent_step(percept, a.memory, a.decide, a.beliefs, a.rng);
      for (const ActionRecord& rec : d.actions)
        trace_.add(step_, EventKind::fire, a.config.id,
                   {{"plan", "Plan" + std::to_string(rec.plan_id)},
                    {"value", rec.value ? fmt_num(*rec.value) : "none"}});
      if (d.activate.empty())
        trace_.add(step_, EventKind::fire, a.config.id, {{"plan", "none"}});
      for (int portidx : d.activate) {
        if (portidx < 0 || portidx + 1 >= static_cast<int>(a.config.output_ports.size()))
          continue;
        HandshakeLink& act = links_.at(a.config.output_ports[portidx]);
        place_on_link(act, v);
        sent[act.id] = fmt_num(v);
        a.pending_plans[portidx + 1].push_back(portidx == 0 ? 1 : 2);
      }
    } else if (!a.delivered_this_step && a.idle_steps >= a.config.policy.timeout) {
      // Timed out: fall back to remembered state.
      auto op3 = [&a, this](double x) { return a.run_unary(x, &trace_, step_); };
      std::optional<ActionRecord> rec =
          timeout_action(a.memory, a.idle_steps, a.config.policy.timeout, op3, step_);
      a.idle_steps = 0;
      if (rec) {
        firings_[a.config.id] += 1;
        if (rec->value && !out_used) {
          emit_policy_output(a, out_port, *rec->value, rec->plan_id, sent);
        } else {
          trace_.add(step_, EventKind::fire, a.config.id,
                     {{"plan", "Plan" + std::to_string(rec->plan_id)}, {"value", "none"}});
        }
      } else {
        trace_.add(step_, EventKind::stall, a.config.id, {{"note", "timeout-empty-memory"}});
      }
    }

    if (!sent.empty()) {
      a.done = true;
      trace_.add(step_, EventKind::done, a.config.id, std::move(sent));
    }
  }

  void emit_policy_output(Agent& a, const std::string& out_port, double v, int plan,
                          std::map<std::string, std::string>& sent) {
    HandshakeLink& l = links_.at(out_port);
    place_on_link(l, v);
    sent[l.id] = fmt_num(v);
    a.memory.set_summary("last_output", v);
    ActionRecord rec;
    rec.step = step_;
    rec.plan_id = plan;
    rec.value = v;
    a.memory.record_action(rec);
    trace_.add(step_, EventKind::fire, a.config.id,
               {{"plan", plan > 0 ? "Plan" + std::to_string(plan) : "emit"},
                {"value", fmt_num(v)}});
  }

  static constexpr std::uint64_t kFragmentRunBound = 100000;

  std::uint64_t seed_;
  Rng rng_;
  const CustomOpRegistry* reg_;
  std::map<std::string, std::unique_ptr<Agent>> agents_;
  std::map<std::string, HandshakeLink> links_;
  std::vector<std::pair<std::string, std::vector<std::string>>> env_inputs_;
  std::vector<std::pair<std::string, std::string>> env_outputs_;
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> belief_routes_;
  DesireConflictTable desire_conflicts_;
  std::vector<std::string> step_order_;
  std::uint64_t step_ = 0;
  std::optional<std::uint64_t> first_output_step_;
  std::map<std::string, std::uint64_t> firings_;
  Trace trace_;
  std::vector<std::pair<std::string, BeliefFeedback>> feedback_;
  std::vector<BeliefFeedback> agent_feedback_;
};

// ---------------------------------------------------------------------------
// Partition builder
// ---------------------------------------------------------------------------

// One agent of a partition: which actors of the composite graph it packs.
// Port orders are optional permutations of the derived boundary arcs.
struct AgentPartSpec {
  std::string id;
  Grain grain = Grain::fine;
  std::vector<std::string> actors;
  std::uint64_t compute_latency = 1;
  PolicySpec policy;
  BeliefSet initial_beliefs;
  std::vector<std::string> input_port_order;
  std::vector<std::string> output_port_order;
};

namespace detail {

// Cuts the agent's fragment out of the composite graph. Boundary arcs keep
// their ids and face the environment of the fragment; order follows the
// composite graph's arc declaration order.
inline DataflowGraph cut_fragment(const DataflowGraph& g,
                                  const std::map<std::string, std::string>& owner,
                                  const std::string& agent_id) {
  DataflowGraph frag;
  for (const auto& a : g.actors)
    if (owner.at(a.id) == agent_id) frag.actors.push_back(a);
  for (const auto& arc : g.arcs) {
    const bool in_here = arc.consumer != kEnv && owner.at(arc.consumer) == agent_id;
    const bool out_here = arc.producer != kEnv && owner.at(arc.producer) == agent_id;
    if (!in_here && !out_here) continue;
    Arc copy = arc;
    if (!out_here) {
      copy.producer = std::string(kEnv);
      frag.env_inputs.push_back(copy.id);
    }
    if (!in_here) {
      copy.consumer = std::string(kEnv);
      frag.env_outputs.push_back(copy.id);
    }
    frag.arcs.push_back(copy);
  }
  return frag;
}

}  // namespace detail

// Actor-to-agent ownership map; raises when the partition does not cover
// the graph exactly once.
inline std::map<std::string, std::string> partition_owners(
    const DataflowGraph& graph, const std::vector<AgentPartSpec>& partition) {
  std::map<std::string, std::string> owner;
  for (const auto& part : partition) {
    for (const auto& actor : part.actors) {
      if (owner.count(actor))
        raise(Errc::precondition, "actor '" + actor + "' assigned to two agents");
      owner[actor] = part.id;
    }
  }
  for (const auto& a : graph.actors)
    if (!owner.count(a.id))
      raise(Errc::precondition, "actor '" + a.id + "' not assigned to any agent");
  return owner;
}

namespace detail {

// Applies an explicit port order; must be a permutation of the derived one.
inline void reorder_ports(std::vector<std::string>& derived,
                          const std::vector<std::string>& wanted,
                          const std::string& agent_id) {
  if (wanted.empty()) return;
  std::vector<std::string> a = derived, b = wanted;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b)
    raise(Errc::port_mismatch,
          "declared ports of '" + agent_id + "' are not the agent's boundary arcs");
  derived = wanted;
}

}  // namespace detail

// Behavior images for every agent of a partition of |graph|. Ports are the
// boundary arc ids in composite declaration order unless the part spec
// declares its own order.
inline std::vector<AgentConfig> partition_configs(
    const DataflowGraph& graph, const std::vector<AgentPartSpec>& partition) {
  const auto owner = partition_owners(graph, partition);
  std::vector<AgentConfig> configs;
  for (const auto& part : partition) {
    AgentConfig cfg;
    cfg.id = part.id;
    cfg.grain = part.grain;
    cfg.behavior = detail::cut_fragment(graph, owner, part.id);
    detail::reorder_ports(cfg.behavior.env_inputs, part.input_port_order, part.id);
    detail::reorder_ports(cfg.behavior.env_outputs, part.output_port_order, part.id);
    cfg.input_ports = cfg.behavior.env_inputs;  // link ids == arc ids
    cfg.output_ports = cfg.behavior.env_outputs;
    cfg.compute_latency = part.compute_latency;
    cfg.policy = part.policy;
    configs.push_back(std::move(cfg));
  }
  return configs;
}

// Builds a multi-agent system that executes |graph| under the given
// partition. Arcs crossing agent boundaries (or facing the environment)
// become handshake links named after the arc. Default environment bindings
// name each env arc after itself; pass |env_input_map| to fan one logical
// input out to several arcs.
inline MultiAgentSystem build_system(
    const DataflowGraph& graph, const std::vector<AgentPartSpec>& partition,
    std::uint64_t seed, const CustomOpRegistry* reg = nullptr,
    const std::vector<std::pair<std::string, std::vector<std::string>>>& env_input_map = {},
    const std::vector<std::pair<std::string, std::string>>& env_output_map = {}) {
  auto report = validate_graph(graph, reg);
  if (!report_valid(report))
    raise(Errc::invalid_behavior, report_to_string(report));

  const auto owner = partition_owners(graph, partition);
  MultiAgentSystem sys(seed, reg);
  std::vector<AgentConfig> configs = partition_configs(graph, partition);
  for (std::size_t i = 0; i < configs.size(); ++i)
    sys.add_agent(configs[i], partition[i].initial_beliefs);

  for (const auto& arc : graph.arcs) {
    const std::string p = arc.producer == kEnv ? std::string(kEnv) : owner.at(arc.producer);
    const std::string c = arc.consumer == kEnv ? std::string(kEnv) : owner.at(arc.consumer);
    if (p == c && p != kEnv) continue;  // internal to one agent
    sys.add_link(arc.id, p, c);
  }

  if (env_input_map.empty()) {
    for (const auto& id : graph.env_inputs) sys.bind_env_input(id, {id});
  } else {
    for (const auto& [name, ids] : env_input_map) sys.bind_env_input(name, ids);
  }
  if (env_output_map.empty()) {
    for (const auto& id : graph.env_outputs) sys.bind_env_output(id, id);
  } else {
    for (const auto& [name, id] : env_output_map) sys.bind_env_output(name, id);
  }
  return sys;
}

}  // namespace agentflow
