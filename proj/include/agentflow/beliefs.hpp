#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "agentflow/dfg.hpp"
#include "agentflow/errors.hpp"

namespace agentflow {

// ---------------------------------------------------------------------------
// Beliefs
// ---------------------------------------------------------------------------

// Overwrites the named entries; everything else is untouched. Returns the
// names that actually changed so the caller can trace the revision.
inline std::vector<std::string> update_beliefs(BeliefSet& beliefs,
                                               const std::map<std::string, double>& percept) {
  std::vector<std::string> revised;
  for (const auto& [name, value] : percept) {
    auto it = beliefs.find(name);
    if (it == beliefs.end() || it->second != value) revised.push_back(name);
    beliefs[name] = value;
  }
  return revised;
}

// ---------------------------------------------------------------------------
// Desires
// ---------------------------------------------------------------------------

using BeliefPredicate = std::function<bool(const BeliefSet&)>;

struct Desire {
  std::string id;
  BeliefPredicate target;  // goal condition over beliefs
};

struct DesireSet {
  std::vector<Desire> desires;
};

// Pairs of desire ids declared mutually inconsistent. Checked when an agent
// is configured; there is no runtime conflict resolution.
class DesireConflictTable {
 public:
  void add(std::string a, std::string b) {
    if (a > b) std::swap(a, b);
    pairs_.insert({std::move(a), std::move(b)});
  }

  bool conflicts(const std::string& a, const std::string& b) const {
    auto p = a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
    return pairs_.count(p) != 0;
  }

  // First conflicting pair within |set|, if any.
  std::optional<std::pair<std::string, std::string>> check(const DesireSet& set) const {
    for (std::size_t i = 0; i < set.desires.size(); ++i)
      for (std::size_t j = i + 1; j < set.desires.size(); ++j)
        if (conflicts(set.desires[i].id, set.desires[j].id))
          return std::make_pair(set.desires[i].id, set.desires[j].id);
    return std::nullopt;
  }

 private:
  std::set<std::pair<std::string, std::string>> pairs_;
};

// ---------------------------------------------------------------------------
// Intentions
// ---------------------------------------------------------------------------

enum class IntentionStatus { inactive, running, done };

struct Intention {
  int plan_id = 0;
  std::string description;
  BeliefPredicate guard;  // eligibility condition; empty means always
  IntentionStatus status = IntentionStatus::inactive;
};

inline const char* intention_status_name(IntentionStatus s) {
  switch (s) {
    case IntentionStatus::inactive: return "inactive";
    case IntentionStatus::running: return "running";
    case IntentionStatus::done: return "done";
  }
  return "?";
}

// Maps desires into the intention to run: the eligible intention with the
// lowest plan id wins ties, and a running intention is never preempted.
// Returns the index into |intentions|, or nothing. The default rule only
// consults the guards; desires ride along for richer selection policies.
inline std::optional<std::size_t> select_intention(const BeliefSet& beliefs,
                                                   const DesireSet& desires,
                                                   const std::vector<Intention>& intentions) {
  (void)desires;
  std::size_t running = 0;
  for (const auto& in : intentions)
    if (in.status == IntentionStatus::running) ++running;
  if (running > 1)
    raise(Errc::precondition, "more than one intention running");
  if (running == 1) return std::nullopt;

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < intentions.size(); ++i) {
    const Intention& in = intentions[i];
    if (in.status == IntentionStatus::done) continue;
    if (in.guard && !in.guard(beliefs)) continue;
    if (!best || in.plan_id < intentions[*best].plan_id) best = i;
  }
  return best;
}

inline std::optional<std::size_t> select_intention(const BeliefSet& beliefs,
                                                   const std::vector<Intention>& intentions) {
  return select_intention(beliefs, DesireSet{}, intentions);
}

// ---------------------------------------------------------------------------
// Agent memory
// ---------------------------------------------------------------------------

struct PerceptRecord {
  std::uint64_t step = 0;
  std::string source;  // "environment" or a peer agent id
  std::map<std::string, double> values;
};

struct ActionRecord {
  std::uint64_t step = 0;
  int plan_id = 0;  // Plans 1..4 for the nondeterministic scenario
  std::optional<double> value;
};

struct MemoryRecord {
  enum class Kind { percept, action } kind;
  PerceptRecord percept;
  ActionRecord action;
};

// Bounded history of (percept, action) records plus a named summary of the
// agent's current state. Oldest records are evicted first.
class AgentMemory {
 public:
  explicit AgentMemory(std::size_t bound = 64) : bound_(bound) {}

  void record_percept(PerceptRecord p) {
    push({MemoryRecord::Kind::percept, std::move(p), {}});
  }

  void record_action(ActionRecord a) {
    push({MemoryRecord::Kind::action, {}, std::move(a)});
  }

  const std::deque<MemoryRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::size_t bound() const { return bound_; }

  const std::map<std::string, double>& summary() const { return summary_; }
  void set_summary(const std::string& key, double v) { summary_[key] = v; }
  std::optional<double> summary_value(const std::string& key) const {
    auto it = summary_.find(key);
    if (it == summary_.end()) return std::nullopt;
    return it->second;
  }
  void erase_summary(const std::string& key) { summary_.erase(key); }
  bool empty_summary() const { return summary_.empty(); }

 private:
  void push(MemoryRecord r) {
    records_.push_back(std::move(r));
    while (records_.size() > bound_) records_.pop_front();
  }

  std::size_t bound_;
  std::deque<MemoryRecord> records_;
  std::map<std::string, double> summary_;
};

}  // namespace agentflow
