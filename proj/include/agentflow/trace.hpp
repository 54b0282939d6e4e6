#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace agentflow {

// Stable numeric formatting for trace lines and result files. Integral
// values print without a fractional part; everything else round-trips.
inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == std::floor(v) && std::fabs(v) < 9.007199254740992e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.0f", v);
    return buf;
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

enum class EventKind { inject, transfer, fire, stall, done, belief, error, reconfig };

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::inject: return "inject";
    case EventKind::transfer: return "transfer";
    case EventKind::fire: return "fire";
    case EventKind::stall: return "stall";
    case EventKind::done: return "done";
    case EventKind::belief: return "belief";
    case EventKind::error: return "error";
    case EventKind::reconfig: return "reconfig";
  }
  return "?";
}

struct TraceEvent {
  std::uint64_t step = 0;
  EventKind kind = EventKind::fire;
  std::string subject;                        // agent, link, or actor id
  std::map<std::string, std::string> values;  // named payload, pre-formatted
};

// Ordered event log. One line per event; lines within a step are emitted
// sorted by (subject, kind) so that run-to-run diffs stay meaningful.
class Trace {
 public:
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  std::uint64_t seed() const { return seed_; }

  void add(TraceEvent ev) { events_.push_back(std::move(ev)); }

  void add(std::uint64_t step, EventKind kind, std::string subject,
           std::map<std::string, std::string> values = {}) {
    events_.push_back({step, kind, std::move(subject), std::move(values)});
  }

  const std::vector<TraceEvent>& events() const { return events_; }
  bool empty() const { return events_.empty(); }
  std::size_t size() const { return events_.size(); }

  void clear() { events_.clear(); }

  void write(std::ostream& os) const {
    os << "# agentflow-trace v1\n";
    os << "# seed=" << seed_ << "\n";
    std::vector<const TraceEvent*> order;
    order.reserve(events_.size());
    for (const auto& ev : events_) order.push_back(&ev);
    std::stable_sort(
        order.begin(), order.end(),
        [](const TraceEvent* a, const TraceEvent* b) {
          if (a->step != b->step) return a->step < b->step;
          if (a->subject != b->subject) return a->subject < b->subject;
          return std::string_view(event_kind_name(a->kind)) <
                 std::string_view(event_kind_name(b->kind));
        });
    for (const TraceEvent* ev : order) {
      os << ev->step << ' ' << event_kind_name(ev->kind) << ' ' << ev->subject;
      for (const auto& [k, v] : ev->values) os << ' ' << k << '=' << v;
      os << '\n';
    }
  }

  std::size_t count(EventKind kind) const {
    std::size_t n = 0;
    for (const auto& ev : events_)
      if (ev.kind == kind) ++n;
    return n;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<TraceEvent> events_;
};

}  // namespace agentflow
