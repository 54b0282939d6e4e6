#pragma once

#include <stdexcept>
#include <string>

namespace agentflow {

enum class Errc {
  unknown_actor,
  not_enabled,
  unknown_op,
  invalid_behavior,
  arity_mismatch,
  grain_mismatch,
  port_mismatch,
  agent_busy,
  unknown_agent,
  unknown_link,
  invalid_threshold,
  too_few_rows,
  empty_memory,
  precondition,
  parse,
  io,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::unknown_actor: return "UnknownActor";
    case Errc::not_enabled: return "NotEnabled";
    case Errc::unknown_op: return "UnknownOperator";
    case Errc::invalid_behavior: return "InvalidBehavior";
    case Errc::arity_mismatch: return "ArityMismatch";
    case Errc::grain_mismatch: return "GrainMismatch";
    case Errc::port_mismatch: return "PortMismatch";
    case Errc::agent_busy: return "AgentBusy";
    case Errc::unknown_agent: return "UnknownAgent";
    case Errc::unknown_link: return "UnknownLink";
    case Errc::invalid_threshold: return "InvalidThreshold";
    case Errc::too_few_rows: return "TooFewRows";
    case Errc::empty_memory: return "EmptyMemory";
    case Errc::precondition: return "Precondition";
    case Errc::parse: return "ParseError";
    case Errc::io: return "IoError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace agentflow
