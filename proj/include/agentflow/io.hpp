#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agentflow/dfg.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/reconfig.hpp"
#include "agentflow/system.hpp"
#include "agentflow/trace.hpp"

namespace agentflow::io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Strict parsing helpers
// ---------------------------------------------------------------------------

inline void expect_fields(const json& obj, const std::string& what,
                          std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) raise(Errc::parse, what + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) raise(Errc::parse, "unknown field '" + key + "' in " + what);
  }
}

inline const json& require(const json& obj, const char* key, const std::string& what) {
  auto it = obj.find(key);
  if (it == obj.end()) raise(Errc::parse, what + " is missing field '" + key + "'");
  return *it;
}

inline std::string require_string(const json& obj, const char* key, const std::string& what) {
  const json& v = require(obj, key, what);
  if (!v.is_string()) raise(Errc::parse, "field '" + std::string(key) + "' of " + what + " must be a string");
  return v.get<std::string>();
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io, "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    raise(Errc::parse, std::string(e.what()) + " in '" + path + "'");
  }
  return j;
}

// ---------------------------------------------------------------------------
// Graph description files
// ---------------------------------------------------------------------------

inline OperatorKind op_from_json(const json& j, const std::string& what) {
  const std::string name = require_string(j, "op", what);
  if (name == "custom") {
    OperatorKind op = OperatorKind::custom(require_string(j, "custom", what));
    return op;
  }
  auto code = op_code_from_name(name);
  if (!code) raise(Errc::parse, "unknown operator '" + name + "' in " + what);
  OperatorKind op = OperatorKind::basic(*code);
  if (*code == OpCode::Const) {
    const json& c = require(j, "const", what);
    if (!c.is_number()) raise(Errc::parse, "'const' must be numeric in " + what);
    op.constant = c.get<double>();
  }
  return op;
}

inline json op_to_json(const OperatorKind& op) {
  json j;
  j["op"] = op_code_name(op.code);
  if (op.code == OpCode::Const) j["const"] = op.constant;
  if (op.code == OpCode::Custom) j["custom"] = op.custom_name;
  return j;
}

// Actors and arcs; env_inputs/env_outputs are the env-facing arcs in
// declaration order.
inline DataflowGraph graph_from_json(const json& j, const std::string& what) {
  DataflowGraph g;
  for (const json& aj : require(j, "actors", what)) {
    expect_fields(aj, "actor", {"id", "op", "const", "custom", "inputs", "outputs"});
    ActorSpec a;
    a.id = require_string(aj, "id", "actor");
    a.op = op_from_json(aj, "actor '" + a.id + "'");
    for (const json& v : require(aj, "inputs", "actor '" + a.id + "'"))
      a.inputs.push_back(v.get<std::string>());
    for (const json& v : require(aj, "outputs", "actor '" + a.id + "'"))
      a.outputs.push_back(v.get<std::string>());
    g.actors.push_back(std::move(a));
  }
  for (const json& rj : require(j, "arcs", what)) {
    expect_fields(rj, "arc", {"id", "producer", "consumer"});
    Arc arc;
    arc.id = require_string(rj, "id", "arc");
    arc.producer = require_string(rj, "producer", "arc '" + arc.id + "'");
    arc.consumer = require_string(rj, "consumer", "arc '" + arc.id + "'");
    if (arc.producer == kEnv) g.env_inputs.push_back(arc.id);
    if (arc.consumer == kEnv) g.env_outputs.push_back(arc.id);
    g.arcs.push_back(std::move(arc));
  }
  return g;
}

inline json graph_to_json(const DataflowGraph& g) {
  json j;
  j["actors"] = json::array();
  for (const auto& a : g.actors) {
    json aj = op_to_json(a.op);
    aj["id"] = a.id;
    aj["inputs"] = a.inputs;
    aj["outputs"] = a.outputs;
    j["actors"].push_back(std::move(aj));
  }
  j["arcs"] = json::array();
  for (const auto& arc : g.arcs)
    j["arcs"].push_back({{"id", arc.id}, {"producer", arc.producer}, {"consumer", arc.consumer}});
  return j;
}

inline PolicySpec policy_from_json(const json& j, const std::string& what) {
  expect_fields(j, "policy of " + what, {"kind", "seed", "timeout"});
  PolicySpec p;
  const std::string kind = require_string(j, "kind", "policy of " + what);
  if (kind == "deterministic") {
    p.kind = PolicyKind::deterministic;
  } else if (kind == "nondeterministic") {
    p.kind = PolicyKind::nondeterministic;
  } else {
    raise(Errc::parse, "unknown policy kind '" + kind + "' in " + what);
  }
  if (j.count("seed")) p.seed = j.at("seed").get<std::uint64_t>();
  if (j.count("timeout")) p.timeout = j.at("timeout").get<std::uint64_t>();
  return p;
}

inline json policy_to_json(const PolicySpec& p) {
  json j;
  j["kind"] = p.kind == PolicyKind::deterministic ? "deterministic" : "nondeterministic";
  j["seed"] = p.seed;
  j["timeout"] = p.timeout;
  return j;
}

struct GraphFile {
  DataflowGraph graph;
  std::vector<AgentPartSpec> partition;  // empty: one fine agent per actor
  std::vector<std::pair<std::string, std::vector<std::string>>> env_input_map;
  std::vector<std::pair<std::string, std::string>> env_output_map;
};

// Full description file: version, actors, arcs, optional agent partition,
// optional params (environment fan-out bindings). Unknown fields anywhere
// are rejected by name.
inline GraphFile load_graph_file(const std::string& path) {
  const json j = load_json_file(path);
  expect_fields(j, "graph file", {"version", "actors", "arcs", "agents", "params"});
  const json& version = require(j, "version", "graph file");
  if (!version.is_number_integer() || version.get<int>() != 1)
    raise(Errc::parse, "unsupported graph file version");

  GraphFile out;
  out.graph = graph_from_json(j, "graph file");

  if (j.count("agents")) {
    for (const json& aj : j.at("agents")) {
      expect_fields(aj, "agent", {"id", "grain", "actors", "latency", "policy", "ports"});
      AgentPartSpec part;
      part.id = require_string(aj, "id", "agent");
      const std::string grain = require_string(aj, "grain", "agent '" + part.id + "'");
      if (grain == "fine") {
        part.grain = Grain::fine;
      } else if (grain == "coarse") {
        part.grain = Grain::coarse;
      } else {
        raise(Errc::parse, "unknown grain '" + grain + "' on agent '" + part.id + "'");
      }
      for (const json& v : require(aj, "actors", "agent '" + part.id + "'"))
        part.actors.push_back(v.get<std::string>());
      if (aj.count("latency")) part.compute_latency = aj.at("latency").get<std::uint64_t>();
      if (aj.count("policy")) part.policy = policy_from_json(aj.at("policy"), "agent '" + part.id + "'");
      if (aj.count("ports")) {
        const json& pj = aj.at("ports");
        expect_fields(pj, "ports of agent '" + part.id + "'", {"inputs", "outputs"});
        if (pj.count("inputs"))
          for (const json& v : pj.at("inputs")) part.input_port_order.push_back(v.get<std::string>());
        if (pj.count("outputs"))
          for (const json& v : pj.at("outputs")) part.output_port_order.push_back(v.get<std::string>());
      }
      out.partition.push_back(std::move(part));
    }
  }
  if (out.partition.empty())
    for (const auto& a : out.graph.actors)
      out.partition.push_back({a.id, Grain::fine, {a.id}});

  if (j.count("params")) {
    const json& pj = j.at("params");
    expect_fields(pj, "params", {"env_input_map", "env_output_map"});
    if (pj.count("env_input_map")) {
      for (const auto& [name, arr] : pj.at("env_input_map").items()) {
        std::vector<std::string> ids;
        for (const json& v : arr) ids.push_back(v.get<std::string>());
        out.env_input_map.emplace_back(name, std::move(ids));
      }
    }
    if (pj.count("env_output_map")) {
      for (const auto& [name, id] : pj.at("env_output_map").items())
        out.env_output_map.emplace_back(name, id.get<std::string>());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration image files
// ---------------------------------------------------------------------------

// Same schema as the agent section of a graph file, with the behavior
// embedded instead of referenced, plus the digest.
inline json image_to_json(const ConfigurationImage& image) {
  json aj;
  aj["id"] = image.config.id;
  aj["grain"] = grain_name(image.config.grain);
  aj["latency"] = image.config.compute_latency;
  aj["policy"] = policy_to_json(image.config.policy);
  aj["behavior"] = graph_to_json(image.config.behavior);
  json j;
  j["version"] = 1;
  j["agent"] = std::move(aj);
  j["digest"] = image.digest;
  return j;
}

inline ConfigurationImage image_from_json(const json& j) {
  expect_fields(j, "image file", {"version", "agent", "digest"});
  const json& version = require(j, "version", "image file");
  if (!version.is_number_integer() || version.get<int>() != 1)
    raise(Errc::parse, "unsupported image file version");
  const json& aj = require(j, "agent", "image file");
  expect_fields(aj, "image agent", {"id", "grain", "latency", "policy", "behavior"});
  AgentConfig cfg;
  cfg.id = require_string(aj, "id", "image agent");
  const std::string grain = require_string(aj, "grain", "image agent");
  if (grain == "fine") {
    cfg.grain = Grain::fine;
  } else if (grain == "coarse") {
    cfg.grain = Grain::coarse;
  } else {
    raise(Errc::parse, "unknown grain '" + grain + "' in image agent");
  }
  if (aj.count("latency")) cfg.compute_latency = aj.at("latency").get<std::uint64_t>();
  if (aj.count("policy")) cfg.policy = policy_from_json(aj.at("policy"), "image agent");
  const json& bj = require(aj, "behavior", "image agent");
  expect_fields(bj, "image behavior", {"actors", "arcs"});
  cfg.behavior = graph_from_json(bj, "image behavior");
  cfg.input_ports = cfg.behavior.env_inputs;
  cfg.output_ports = cfg.behavior.env_outputs;
  ConfigurationImage image{std::move(cfg), require_string(j, "digest", "image file")};
  const std::string expect = config_digest(image.config);
  if (image.digest != expect)
    raise(Errc::parse, "image digest mismatch: file says " + image.digest +
                           ", content hashes to " + expect);
  return image;
}

inline void save_image_file(const ConfigurationImage& image, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io, "cannot write '" + path + "'");
  out << image_to_json(image).dump(2) << "\n";
}

inline ConfigurationImage load_image_file(const std::string& path) {
  return image_from_json(load_json_file(path));
}

// ---------------------------------------------------------------------------
// Reconfiguration scripts
// ---------------------------------------------------------------------------

struct ScriptEntry {
  std::uint64_t at_step = 0;
  std::string agent;
  std::string image;  // path of an image file
  ReconfigMode mode = ReconfigMode::quiescent;
};

inline std::vector<ScriptEntry> load_script_file(const std::string& path) {
  const json j = load_json_file(path);
  expect_fields(j, "script file", {"version", "script"});
  const json& version = require(j, "version", "script file");
  if (!version.is_number_integer() || version.get<int>() != 1)
    raise(Errc::parse, "unsupported script file version");
  std::vector<ScriptEntry> out;
  for (const json& ej : require(j, "script", "script file")) {
    expect_fields(ej, "script entry", {"at_step", "agent", "image", "mode"});
    ScriptEntry e;
    e.at_step = require(ej, "at_step", "script entry").get<std::uint64_t>();
    e.agent = require_string(ej, "agent", "script entry");
    e.image = require_string(ej, "image", "script entry");
    const std::string mode = require_string(ej, "mode", "script entry");
    if (mode == "quiescent") {
      e.mode = ReconfigMode::quiescent;
    } else if (mode == "forced") {
      e.mode = ReconfigMode::forced;
    } else {
      raise(Errc::parse, "unknown reconfig mode '" + mode + "'");
    }
    if (!out.empty() && e.at_step <= out.back().at_step)
      raise(Errc::parse, "script at_step values must be strictly increasing");
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Input traces (delimited text, header row required)
// ---------------------------------------------------------------------------

struct InputTrace {
  std::vector<std::string> columns;                                // minus "step"
  std::map<std::uint64_t, std::map<std::string, double>> rows;     // step -> values
  std::uint64_t max_step = 0;
};

inline InputTrace load_input_csv(const std::string& path, bool quantize = false) {
  std::ifstream in(path);
  if (!in) raise(Errc::io, "cannot open '" + path + "'");
  InputTrace t;
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.push_back("");
    return cells;
  };
  if (!std::getline(in, line)) raise(Errc::parse, "'" + path + "' is empty, header row required");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split(line);
  if (header.empty() || header[0] != "step")
    raise(Errc::parse, "'" + path + "' line 1: first column must be 'step'");
  for (std::size_t i = 1; i < header.size(); ++i) t.columns.push_back(header[i]);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() > header.size())
      raise(Errc::parse, "'" + path + "' line " + std::to_string(lineno) + ": too many cells");
    std::uint64_t step = 0;
    try {
      step = std::stoull(cells[0]);
    } catch (...) {
      raise(Errc::parse, "'" + path + "' line " + std::to_string(lineno) + ": bad step '" + cells[0] + "'");
    }
    if (step == 0)
      raise(Errc::parse, "'" + path + "' line " + std::to_string(lineno) + ": steps are 1-based");
    std::map<std::string, double> row;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (cells[i].empty()) continue;
      double v = 0;
      try {
        v = std::stod(cells[i]);
      } catch (...) {
        raise(Errc::parse, "'" + path + "' line " + std::to_string(lineno) + ": bad value in column '" +
                               header[i] + "'");
      }
      if (quantize) v = std::nearbyint(v);
      row[header[i]] = v;
    }
    if (!row.empty()) t.rows[step] = std::move(row);
    t.max_step = std::max(t.max_step, step);
  }
  return t;
}

// Paired sensor samples in step order, for the fusion pipeline.
inline std::vector<std::pair<double, double>> sensor_pairs(const InputTrace& t) {
  std::vector<std::pair<double, double>> out;
  for (const auto& [step, row] : t.rows) {
    auto a = row.find("s1");
    auto b = row.find("s2");
    if (a == row.end() || b == row.end())
      raise(Errc::parse, "sensor trace row at step " + std::to_string(step) +
                             " needs both s1 and s2");
    out.emplace_back(a->second, b->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------------

struct RunReport {
  std::uint64_t steps = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint64_t> firings;
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t in_flight = 0;
  std::uint64_t reconfig_dropped = 0;
  std::optional<std::uint64_t> first_output_step;
  std::optional<std::uint64_t> refused_step;  // quiescent swap that was refused
  std::string exit_status = "quiescent";
};

inline RunReport make_report(const MultiAgentSystem& sys, const std::string& status) {
  RunReport r;
  r.steps = sys.step_count();
  r.seed = sys.seed();
  r.firings = sys.firing_counts();
  r.injected = sys.tokens_injected();
  r.delivered = sys.tokens_delivered();
  r.in_flight = sys.tokens_in_flight();
  r.reconfig_dropped = sys.tokens_reconfig_dropped();
  r.first_output_step = sys.first_output_step();
  r.exit_status = status;
  if (r.injected != r.delivered + r.in_flight + r.reconfig_dropped)
    raise(Errc::precondition, "conservation identity violated in report");
  return r;
}

inline json report_to_json(const RunReport& r) {
  json j;
  j["steps"] = r.steps;
  j["seed"] = r.seed;
  j["firings"] = r.firings;
  j["tokens"] = {{"injected", r.injected},
                 {"delivered", r.delivered},
                 {"in_flight", r.in_flight},
                 {"reconfig_dropped", r.reconfig_dropped}};
  if (r.first_output_step)
    j["critical_path_first_output"] = *r.first_output_step;
  else
    j["critical_path_first_output"] = nullptr;
  if (r.refused_step) j["refused_step"] = *r.refused_step;
  j["exit_status"] = r.exit_status;
  return j;
}

// ---------------------------------------------------------------------------
// State serialization (reconfiguration isolation checks)
// ---------------------------------------------------------------------------

inline json agent_state_json(const Agent& a) {
  json j;
  j["config_digest"] = config_digest(a.config);
  j["beliefs"] = a.beliefs;
  j["idle_steps"] = a.idle_steps;
  j["busy_remaining"] = a.busy_remaining;
  j["done"] = a.done;
  json ports = json::array();
  for (const auto& p : a.port_in)
    ports.push_back(p ? json{{"value", p->value}, {"seq", p->seq}} : json(nullptr));
  j["port_in"] = std::move(ports);
  json slots = json::object();
  for (const auto& arc : a.config.behavior.arcs) {
    const auto& s = a.fragment->slot(arc.id);
    slots[arc.id] = s ? json{{"value", s->value}, {"seq", s->seq}} : json(nullptr);
  }
  j["fragment"] = std::move(slots);
  json mem = json::array();
  for (const auto& rec : a.memory.records()) {
    if (rec.kind == MemoryRecord::Kind::percept) {
      mem.push_back({{"percept", rec.percept.values}, {"step", rec.percept.step}, {"source", rec.percept.source}});
    } else {
      mem.push_back({{"action_plan", rec.action.plan_id},
                     {"step", rec.action.step},
                     {"value", rec.action.value ? json(*rec.action.value) : json(nullptr)}});
    }
  }
  j["memory"] = std::move(mem);
  j["summary"] = a.memory.summary();
  json intents = json::array();
  for (const auto& in : a.intentions)
    intents.push_back({{"plan", in.plan_id}, {"status", intention_status_name(in.status)}});
  j["intentions"] = std::move(intents);
  return j;
}

inline json link_state_json(const HandshakeLink& l) {
  json j;
  j["id"] = l.id;
  j["producer"] = l.producer;
  j["consumer"] = l.consumer;
  j["data"] = l.data ? json{{"value", l.data->value}, {"seq", l.data->seq}} : json(nullptr);
  j["strobe"] = l.strobe;
  j["request"] = l.request;
  j["injected"] = l.injected;
  j["delivered"] = l.delivered;
  j["dropped"] = l.dropped;
  j["queued"] = l.env_queue.size();
  return j;
}

// ---------------------------------------------------------------------------
// Result writers
// ---------------------------------------------------------------------------

inline void write_trace_file(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::io, "cannot write '" + path + "'");
  trace.write(out);
}

inline void write_report_file(const RunReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io, "cannot write '" + path + "'");
  out << report_to_json(report).dump(2) << "\n";
}

}  // namespace agentflow::io
