#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agentflow/dfg.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/system.hpp"
#include "agentflow/trace.hpp"

namespace agentflow {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// One tumbling window of paired sensor readings.
struct ObservationWindow {
  std::vector<std::pair<double, double>> pairs;  // (a_i, b_i), i = 1..k
};

struct FusionParams {
  double closeness_threshold = 20.0;   // maximum difference between sensors
  double confidence_threshold = 0.5;   // gate for accepting the average
  std::size_t window = 8;              // k, pairs per window
  double rho = 1.5;                    // threshold-adaptation factor, > 1
  double closeness_cap = 1000.0;       // adaptation never exceeds this

  void validate() const {
    if (!(closeness_threshold > 0))
      raise(Errc::invalid_threshold, "closeness_threshold must be > 0");
    if (!(confidence_threshold >= 0 && confidence_threshold <= 1))
      raise(Errc::invalid_threshold, "confidence_threshold must be in [0,1]");
    if (window < 2) raise(Errc::invalid_threshold, "window must be >= 2");
    if (!(rho > 1)) raise(Errc::invalid_threshold, "rho must be > 1");
    if (!(closeness_cap >= closeness_threshold))
      raise(Errc::invalid_threshold, "closeness cap below initial threshold");
  }
};

enum class FusionFlag { ok, low_confidence, degraded };

inline const char* fusion_flag_name(FusionFlag f) {
  switch (f) {
    case FusionFlag::ok: return "ok";
    case FusionFlag::low_confidence: return "low_confidence";
    case FusionFlag::degraded: return "degraded";
  }
  return "?";
}

struct FusionResult {
  std::size_t window_index = 0;
  double r = 0.0;            // 0 when the window had zero variance
  bool zero_variance = false;
  double corr2 = 0.0;
  double gamma_raw = 0.0;    // may be negative
  double gamma = 0.0;        // clamped to [0,1]
  double average = 0.0;
  double confidence = 0.0;
  double fused = 0.0;
  FusionFlag flag = FusionFlag::ok;
};

// ---------------------------------------------------------------------------
// The fusion metrics
// ---------------------------------------------------------------------------

// Pearson-style correlation over the window:
//   (N*sum(ab) - sum(a)sum(b)) / ([N*sum(a^2)-sum(a)^2]^1/2 [N*sum(b^2)-sum(b)^2]^1/2)
// with N = k. Returns nothing when either bracketed term degenerates
// (constant series); callers map that to r = 0 with a degraded flag. The
// result is clamped to [-1,1] to absorb floating-point overshoot.
inline std::optional<double> correlation(const ObservationWindow& w) {
  const std::size_t k = w.pairs.size();
  if (k < 2) raise(Errc::precondition, "correlation needs at least 2 pairs");
  const double n = static_cast<double>(k);
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (const auto& [a, b] : w.pairs) {
    sa += a;
    sb += b;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  const double va = n * saa - sa * sa;
  const double vb = n * sbb - sb * sb;
  constexpr double kZeroVarianceTol = 1e-12;
  if (va <= kZeroVarianceTol || vb <= kZeroVarianceTol) return std::nullopt;
  const double r = (n * sab - sa * sb) / (std::sqrt(va) * std::sqrt(vb));
  return std::clamp(r, -1.0, 1.0);
}

// Inverse correlation is assumed unlikely; squaring makes the sign moot.
inline double correlation_squared(double r) { return r * r; }

struct Closeness {
  double raw;      // 1 - |a-b| / threshold, at most 1
  double clamped;  // max(raw, 0), the value confidence uses
};

inline Closeness closeness(double sensor_a, double sensor_b, double threshold) {
  if (!(threshold > 0)) raise(Errc::invalid_threshold, "closeness threshold must be > 0");
  const double raw = 1.0 - std::fabs(sensor_a - sensor_b) / threshold;
  return {raw, std::max(raw, 0.0)};
}

inline double average(double sensor_a, double sensor_b) {
  return (sensor_a + sensor_b) / 2.0;
}

// Confidence.Factor = Min(corr^2 over the window history) * gamma.
// With a single-window history this degenerates to corr^2 * gamma.
inline double confidence(std::span<const double> corr2_history, double gamma) {
  if (corr2_history.empty())
    raise(Errc::precondition, "confidence needs a non-empty history");
  double m = corr2_history[0];
  for (double v : corr2_history) m = std::min(m, v);
  return m * gamma;
}

struct FuseOutcome {
  double fused = 0.0;
  FusionFlag flag = FusionFlag::ok;
  // Present when the gate failed: the adapted closeness threshold.
  std::optional<double> new_closeness_threshold;
};

// Confidence-gated averaging with hold-last-good fallback. On a failed gate
// the closeness threshold is raised by rho (up to its cap) so later windows
// tolerate more sensor disagreement.
inline FuseOutcome fuse(double avg, double conf, double confidence_threshold,
                        double closeness_threshold, double rho, double cap,
                        const std::optional<double>& previous_fused) {
  FuseOutcome out;
  if (conf >= confidence_threshold) {
    out.fused = avg;
    out.flag = FusionFlag::ok;
    return out;
  }
  out.new_closeness_threshold = std::min(closeness_threshold * rho, cap);
  if (previous_fused) {
    out.fused = *previous_fused;
    out.flag = FusionFlag::low_confidence;
  } else {
    out.fused = avg;
    out.flag = FusionFlag::degraded;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Window-accumulating operators for the agent pipeline
// ---------------------------------------------------------------------------
//
// Each of the five fusion stages is a custom dataflow operator. The three
// first-level stages consume one (s1, s2) pair per firing and emit once per
// full window; the representative pair for closeness and average is the
// window's final sample. Thresholds are read live from the owning agent's
// beliefs. The gate's feedback crosses two handshake hops, so it reaches
// the closeness stage before the next window closes whenever the window
// length is at least 3; at the minimum length of 2 it takes effect one
// window later.

namespace fusion_ops {

inline double required_belief(const EvalContext& ctx, const char* name) {
  if (!ctx.beliefs)
    raise(Errc::precondition, std::string("operator needs belief '") + name + "'");
  auto it = ctx.beliefs->find(name);
  if (it == ctx.beliefs->end())
    raise(Errc::precondition, std::string("missing belief '") + name + "'");
  return it->second;
}

class WindowCorrelation final : public CustomOpInstance {
 public:
  explicit WindowCorrelation(std::size_t k) : k_(k) {}
  bool eval(std::span<const double> in, std::span<std::optional<double>> out,
            EvalContext& ctx) override {
    win_.pairs.emplace_back(in[0], in[1]);
    if (win_.pairs.size() < k_) return true;
    const std::optional<double> r = correlation(win_);
    win_.pairs.clear();
    const double rv = r.value_or(0.0);
    const double c2 = correlation_squared(rv);
    if (ctx.event_values) {
      (*ctx.event_values)["r"] = fmt_num(rv);
      (*ctx.event_values)["corr2"] = fmt_num(c2);
      if (!r) (*ctx.event_values)["zero_variance"] = "1";
    }
    out[0] = c2;
    return true;
  }

 private:
  std::size_t k_;
  ObservationWindow win_;
};

class WindowCloseness final : public CustomOpInstance {
 public:
  explicit WindowCloseness(std::size_t k) : k_(k) {}
  bool eval(std::span<const double> in, std::span<std::optional<double>> out,
            EvalContext& ctx) override {
    ++seen_;
    last_ = {in[0], in[1]};
    if (seen_ < k_) return true;
    seen_ = 0;
    const double thr = required_belief(ctx, "closeness_threshold");
    const Closeness c = closeness(last_.first, last_.second, thr);
    if (ctx.event_values) {
      (*ctx.event_values)["gamma"] = fmt_num(c.clamped);
      (*ctx.event_values)["gamma_raw"] = fmt_num(c.raw);
    }
    if (ctx.feedback) {
      ctx.feedback->push_back({"last_a", last_.first});
      ctx.feedback->push_back({"last_b", last_.second});
    }
    out[0] = c.clamped;
    return true;
  }

 private:
  std::size_t k_;
  std::size_t seen_ = 0;
  std::pair<double, double> last_{0, 0};
};

class WindowAverage final : public CustomOpInstance {
 public:
  explicit WindowAverage(std::size_t k) : k_(k) {}
  bool eval(std::span<const double> in, std::span<std::optional<double>> out,
            EvalContext&) override {
    ++seen_;
    last_ = average(in[0], in[1]);
    if (seen_ < k_) return true;
    seen_ = 0;
    out[0] = last_;
    return true;
  }

 private:
  std::size_t k_;
  std::size_t seen_ = 0;
  double last_ = 0;
};

// Running minimum of windowed corr^2 times the window's gamma.
class ConfidenceFactor final : public CustomOpInstance {
 public:
  bool eval(std::span<const double> in, std::span<std::optional<double>> out,
            EvalContext& ctx) override {
    history_.push_back(in[0]);
    const double conf = confidence(history_, in[1]);
    if (ctx.event_values) (*ctx.event_values)["confidence"] = fmt_num(conf);
    out[0] = conf;
    return true;
  }

 private:
  std::vector<double> history_;
};

class FusionGate final : public CustomOpInstance {
 public:
  bool eval(std::span<const double> in, std::span<std::optional<double>> out,
            EvalContext& ctx) override {
    const double avg = in[0];
    const double conf = in[1];
    const double conf_thr = required_belief(ctx, "confidence_threshold");
    const double close_thr = required_belief(ctx, "closeness_threshold");
    const double rho = required_belief(ctx, "rho");
    const double cap = required_belief(ctx, "closeness_cap");
    const FuseOutcome o =
        fuse(avg, conf, conf_thr, close_thr, rho, cap, previous_);
    previous_ = o.fused;
    if (ctx.event_values) {
      (*ctx.event_values)["fused"] = fmt_num(o.fused);
      (*ctx.event_values)["flag"] = fusion_flag_name(o.flag);
      (*ctx.event_values)["avg"] = fmt_num(avg);
      (*ctx.event_values)["confidence"] = fmt_num(conf);
    }
    if (o.new_closeness_threshold && ctx.feedback)
      ctx.feedback->push_back({"closeness_threshold", *o.new_closeness_threshold});
    out[0] = o.fused;
    return true;
  }

 private:
  std::optional<double> previous_;
};

}  // namespace fusion_ops

// Registers the five pipeline stages, parameterized by the window length.
inline void register_fusion_ops(CustomOpRegistry& reg, std::size_t window) {
  reg.add("fusion_corr",
          {2, 1, true, [window] { return std::make_unique<fusion_ops::WindowCorrelation>(window); }});
  reg.add("fusion_close",
          {2, 1, true, [window] { return std::make_unique<fusion_ops::WindowCloseness>(window); }});
  reg.add("fusion_avg",
          {2, 1, true, [window] { return std::make_unique<fusion_ops::WindowAverage>(window); }});
  reg.add("fusion_conf",
          {2, 1, true, [] { return std::make_unique<fusion_ops::ConfidenceFactor>(); }});
  reg.add("fusion_fuse",
          {2, 1, true, [] { return std::make_unique<fusion_ops::FusionGate>(); }});
}

// The fusion composite graph: s1/s2 fan out to the correlation, closeness,
// and average stages; confidence joins corr^2 with gamma; the gate joins
// average with confidence and drives the env output.
inline DataflowGraph fusion_graph() {
  DataflowGraph g;
  auto arc = [&g](const std::string& id, const std::string& p, const std::string& c) {
    g.arcs.push_back({id, p, c});
  };
  arc("s1_corr", std::string(kEnv), "corr");
  arc("s2_corr", std::string(kEnv), "corr");
  arc("s1_close", std::string(kEnv), "close");
  arc("s2_close", std::string(kEnv), "close");
  arc("s1_avg", std::string(kEnv), "avg");
  arc("s2_avg", std::string(kEnv), "avg");
  arc("corr2", "corr", "conf");
  arc("gamma", "close", "conf");
  arc("mean", "avg", "gate");
  arc("conf", "conf", "gate");
  arc("fused", "gate", std::string(kEnv));
  g.actors.push_back({"corr", OperatorKind::custom("fusion_corr"), {"s1_corr", "s2_corr"}, {"corr2"}});
  g.actors.push_back({"close", OperatorKind::custom("fusion_close"), {"s1_close", "s2_close"}, {"gamma"}});
  g.actors.push_back({"avg", OperatorKind::custom("fusion_avg"), {"s1_avg", "s2_avg"}, {"mean"}});
  g.actors.push_back({"conf", OperatorKind::custom("fusion_conf"), {"corr2", "gamma"}, {"conf"}});
  g.actors.push_back({"gate", OperatorKind::custom("fusion_fuse"), {"mean", "conf"}, {"fused"}});
  g.env_inputs = {"s1_corr", "s2_corr", "s1_close", "s2_close", "s1_avg", "s2_avg"};
  g.env_outputs = {"fused"};
  return g;
}

// Five fine-grain agents on the three-level harness: Agent1 correlation, Agent2
// closeness, Agent3 average, Agent4 confidence, Agent5 the fusion gate.
// Agent5's threshold feedback travels as a belief update to Agent2 (and its
// own mirror), not as a graph cycle.
inline MultiAgentSystem build_fusion_system(const FusionParams& params,
                                            std::uint64_t seed,
                                            const CustomOpRegistry& reg) {
  params.validate();
  BeliefSet thresholds{{"closeness_threshold", params.closeness_threshold},
                       {"confidence_threshold", params.confidence_threshold},
                       {"correlation_threshold", 0.0},  // announced but never adapted
                       {"rho", params.rho},
                       {"closeness_cap", params.closeness_cap}};
  std::vector<AgentPartSpec> partition = {
      {"Agent1", Grain::fine, {"corr"}, 1, {}, thresholds},
      {"Agent2", Grain::fine, {"close"}, 1, {}, thresholds},
      {"Agent3", Grain::fine, {"avg"}, 1, {}, thresholds},
      {"Agent4", Grain::fine, {"conf"}, 1, {}, thresholds},
      {"Agent5", Grain::fine, {"gate"}, 1, {}, thresholds},
  };
  MultiAgentSystem sys = build_system(
      fusion_graph(), partition, seed, &reg,
      {{"s1", {"s1_corr", "s1_close", "s1_avg"}}, {"s2", {"s2_corr", "s2_close", "s2_avg"}}},
      {{"fused", "fused"}});
  sys.add_belief_route("Agent5", "closeness_threshold", {"Agent2", "Agent5"});
  sys.add_belief_route("Agent2", "last_a", {"Agent2"});
  sys.add_belief_route("Agent2", "last_b", {"Agent2"});
  // one plan per agent, all serving the shared goal of a fused value
  const std::pair<const char*, const char*> plans[] = {{"Agent1", "determine correlation"},
                                                       {"Agent2", "find closeness"},
                                                       {"Agent3", "compute average"},
                                                       {"Agent4", "find confidence"},
                                                       {"Agent5", "produce fusion value"}};
  int plan_id = 1;
  for (const auto& [id, what] : plans) {
    Agent& a = sys.agent(id);
    a.desires.desires.push_back({"fusion-value", nullptr});
    a.intentions.push_back({plan_id++, what, nullptr, IntentionStatus::inactive});
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Window driver
// ---------------------------------------------------------------------------

// Feeds a sensor trace through the agent pipeline one sample per step and
// assembles the per-window rows from the stage trace events and the fused
// env outputs.
struct FusionRun {
  std::vector<FusionResult> rows;
  std::uint64_t steps = 0;
  double final_closeness_threshold = 0;  // Agent2's belief after the run
};

inline FusionRun run_fusion_pipeline(const std::vector<std::pair<double, double>>& samples,
                                     const FusionParams& params, std::uint64_t seed) {
  params.validate();
  if (samples.size() < params.window)
    raise(Errc::too_few_rows, "trace has " + std::to_string(samples.size()) +
                                  " rows, window needs " + std::to_string(params.window));
  CustomOpRegistry reg;
  register_fusion_ops(reg, params.window);
  MultiAgentSystem sys = build_fusion_system(params, seed, reg);

  FusionRun run;
  std::vector<double> fused_values;
  const std::size_t n_windows = samples.size() / params.window;
  std::size_t fed = 0;
  const std::size_t usable = n_windows * params.window;
  std::uint64_t guard = 0;
  while (fused_values.size() < n_windows) {
    std::map<std::string, double> env;
    if (fed < usable) {
      env = {{"s1", samples[fed].first}, {"s2", samples[fed].second}};
      ++fed;
    }
    StepResult sr = sys.step(env);
    for (const auto& [name, v] : sr.env_outputs)
      if (name == "fused") fused_values.push_back(v);
    if (++guard > usable * 10 + 1000)
      raise(Errc::precondition, "fusion pipeline failed to deliver all windows");
  }
  run.steps = sys.step_count();
  run.final_closeness_threshold = sys.agent("Agent2").beliefs.at("closeness_threshold");

  // Assemble rows from the stage events, indexed by per-stage occurrence.
  std::vector<FusionResult> rows(n_windows);
  for (std::size_t i = 0; i < n_windows; ++i) {
    rows[i].window_index = i;
    rows[i].fused = fused_values[i];
  }
  std::size_t n_corr = 0, n_close = 0, n_avg = 0, n_conf = 0, n_gate = 0;
  for (const TraceEvent& ev : sys.trace().events()) {
    if (ev.kind != EventKind::fire) continue;
    auto has = [&ev](const char* key) { return ev.values.count(key) != 0; };
    auto num = [&ev](const char* key) { return std::stod(ev.values.at(key)); };
    if (ev.subject == "Agent1/corr" && has("r")) {
      if (n_corr < n_windows) {
        rows[n_corr].r = num("r");
        rows[n_corr].corr2 = num("corr2");
        rows[n_corr].zero_variance = has("zero_variance");
      }
      ++n_corr;
    } else if (ev.subject == "Agent2/close" && has("gamma")) {
      if (n_close < n_windows) {
        rows[n_close].gamma = num("gamma");
        rows[n_close].gamma_raw = num("gamma_raw");
      }
      ++n_close;
    } else if (ev.subject == "Agent3/avg" && has("out.mean")) {
      if (n_avg < n_windows) rows[n_avg].average = num("out.mean");
      ++n_avg;
    } else if (ev.subject == "Agent4/conf" && has("confidence")) {
      if (n_conf < n_windows) rows[n_conf].confidence = num("confidence");
      ++n_conf;
    } else if (ev.subject == "Agent5/gate" && has("flag")) {
      if (n_gate < n_windows) {
        rows[n_gate].flag = ev.values.at("flag") == "ok" ? FusionFlag::ok
                            : ev.values.at("flag") == "low_confidence"
                                ? FusionFlag::low_confidence
                                : FusionFlag::degraded;
      }
      ++n_gate;
    }
  }
  // Zero-variance windows surface as degraded regardless of the gate's view.
  for (auto& row : rows)
    if (row.zero_variance) row.flag = FusionFlag::degraded;
  run.rows = std::move(rows);
  return run;
}

}  // namespace agentflow
