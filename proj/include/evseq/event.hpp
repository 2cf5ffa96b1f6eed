#pragma once

// Event triplets, responses and synthetic video samples.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evseq/errors.hpp"

namespace evseq {

inline constexpr double kMaxTimestamp = 9999.9;
inline constexpr double kMaxScore = 9.9;
inline constexpr std::size_t kDefaultMaxEvents = 50;

enum class TaskKind { general, dvc, mr, vhd, vs };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::general: return "general";
    case TaskKind::dvc: return "dvc";
    case TaskKind::mr: return "mr";
    case TaskKind::vhd: return "vhd";
    case TaskKind::vs: return "vs";
  }
  return "general";
}

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
  for (TaskKind k : {TaskKind::general, TaskKind::dvc, TaskKind::mr, TaskKind::vhd, TaskKind::vs}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

// Which components of an event carry data. An absent component serializes
// as a lone <sync> placeholder.
struct PresentMask {
  bool time = true;
  bool score = false;
  bool text = true;

  friend bool operator==(const PresentMask&, const PresentMask&) = default;
};

inline PresentMask mask_for(TaskKind k) {
  switch (k) {
    case TaskKind::general: return {false, false, true};
    case TaskKind::dvc:
    case TaskKind::mr: return {true, false, true};
    case TaskKind::vhd:
    case TaskKind::vs: return {true, true, true};
  }
  return {};
}

struct Event {
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
  std::string caption;
  PresentMask present;

  friend bool operator==(const Event&, const Event&) = default;
};

struct Response {
  std::vector<Event> events;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  friend bool operator==(const Response&, const Response&) = default;
};

// Number of tenths in |x| rounded half-up, judged on the 6-decimal rendering
// of x so that values such as 2.25 or 0.35 round the way they read.
inline long long tenths_half_up(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", std::fabs(x));
  long long integral = 0;
  const char* p = buf;
  for (; *p && *p != '.'; ++p) integral = integral * 10 + (*p - '0');
  int d1 = 0;
  int d2 = 0;
  if (*p == '.') {
    d1 = p[1] - '0';
    d2 = p[2] - '0';
  }
  long long tenths = integral * 10 + d1;
  if (d2 >= 5) ++tenths;
  return tenths;
}

inline double round1(double x) {
  const double r = static_cast<double>(tenths_half_up(x)) / 10.0;
  return x < 0 ? -r : r;
}

// Stable ascending order by (start, end); equal keys keep input order.
inline std::vector<Event> sort_events(std::vector<Event> events) {
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.start != b.start) return a.start < b.start;
    return a.end < b.end;
  });
  return events;
}

inline bool is_sorted_events(const std::vector<Event>& events) {
  for (std::size_t i = 1; i < events.size(); ++i) {
    const Event& a = events[i - 1];
    const Event& b = events[i];
    if (b.start < a.start || (b.start == a.start && b.end < a.end)) return false;
  }
  return true;
}

struct Finding {
  enum class Kind { order, interval_inverted, out_of_range, event_count, mask, score_range, caption };
  Kind kind;
  std::size_t event_index;  // events.size() for response-level findings
  std::string message;
};

struct ValidateOptions {
  std::size_t max_events = kDefaultMaxEvents;
  std::optional<TaskKind> task;  // when set, every mask must equal mask_for(task)
};

inline std::vector<Finding> validate_response(const Response& r, double duration,
                                              const ValidateOptions& opt = {}) {
  std::vector<Finding> out;
  const std::size_t k = r.events.size();
  if (k < 1 || k > opt.max_events) {
    out.push_back({Finding::Kind::event_count, k,
                   "event count out of range: " + std::to_string(k) + " not in [1, " +
                       std::to_string(opt.max_events) + "]"});
  }
  if (!is_sorted_events(r.events)) {
    out.push_back({Finding::Kind::order, k, "events not sorted by (start, end)"});
  }
  const double hi = std::min(duration, kMaxTimestamp);
  for (std::size_t i = 0; i < k; ++i) {
    const Event& e = r.events[i];
    if (e.present.time) {
      if (e.start > e.end) out.push_back({Finding::Kind::interval_inverted, i, "interval inverted"});
      if (!(e.start >= 0.0) || !(e.end >= 0.0) || e.start > hi || e.end > hi) {
        out.push_back({Finding::Kind::out_of_range, i, "timestamp outside [0, " + std::to_string(hi) + "]"});
      }
    } else if (e.start != 0.0 || e.end != 0.0) {
      out.push_back({Finding::Kind::mask, i, "placeholder time carries a value"});
    }
    if (e.present.score) {
      if (!(e.score >= 0.0) || e.score > kMaxScore) {
        out.push_back({Finding::Kind::score_range, i, "score outside [0.0, 9.9]"});
      }
    } else if (e.score != 0.0) {
      out.push_back({Finding::Kind::mask, i, "placeholder score carries a value"});
    }
    if (e.present.text == e.caption.empty()) {
      out.push_back({Finding::Kind::caption, i,
                     e.present.text ? "caption marked present but empty" : "placeholder caption carries text"});
    }
    if (opt.task && !(e.present == mask_for(*opt.task))) {
      out.push_back({Finding::Kind::mask, i,
                     "present mask inconsistent with task " + std::string(to_string(*opt.task))});
    }
  }
  return out;
}

// Frame-feature tensor of shape frames x patches x dim, row-major.
struct FrameFeatures {
  std::size_t frames = 0;
  std::size_t patches = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  FrameFeatures() = default;
  FrameFeatures(std::size_t t, std::size_t n, std::size_t d)
      : frames(t), patches(n), dim(d), values(t * n * d, 0.0) {}

  double& at(std::size_t t, std::size_t n, std::size_t d) { return values[(t * patches + n) * dim + d]; }
  double at(std::size_t t, std::size_t n, std::size_t d) const { return values[(t * patches + n) * dim + d]; }
  const double* frame(std::size_t t) const { return values.data() + t * patches * dim; }

  friend bool operator==(const FrameFeatures&, const FrameFeatures&) = default;
};

struct VideoSample {
  std::string video_id;
  FrameFeatures features;
  std::vector<double> frame_times;
  double duration = 0.0;
  std::string instruction;
  Response gold;
  TaskKind task = TaskKind::dvc;
};

}  // namespace evseq
