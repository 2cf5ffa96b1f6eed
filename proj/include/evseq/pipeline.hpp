#pragma once

// Annotation records for the five task formats and the data-preparation
// steps built on them: caption filtering, fuzzy similarity, percentile
// score binning, clip splitting and summary-clip selection.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evseq/errors.hpp"
#include "evseq/event.hpp"

namespace evseq {

struct AnnotationRecord {
  std::string video_id;
  double duration = 0.0;
  TaskKind task = TaskKind::dvc;
  std::string instruction;
  Response events;
  // Optional index of the event each entry was derived from (clips of a
  // split event share one); empty when the record carries none.
  std::vector<std::size_t> sources;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

namespace detail {

[[noreturn]] inline void schema_error(std::size_t line, const std::string& field, const std::string& what) {
  throw ParseError("line " + std::to_string(line) + ": field '" + field + "': " + what, line);
}

inline double number_field(const nlohmann::json& j, const char* key, std::size_t line, const std::string& path) {
  if (!j.contains(key)) schema_error(line, path + key, "missing");
  if (!j[key].is_number()) schema_error(line, path + key, "must be a number");
  return j[key].get<double>();
}

}  // namespace detail

inline nlohmann::json record_to_json(const AnnotationRecord& r) {
  nlohmann::json j;
  j["video_id"] = r.video_id;
  j["duration"] = r.duration;
  j["task"] = std::string(to_string(r.task));
  j["instruction"] = r.instruction;
  j["events"] = nlohmann::json::array();
  for (std::size_t i = 0; i < r.events.events.size(); ++i) {
    const Event& e = r.events.events[i];
    nlohmann::json ej = nlohmann::json::object();
    if (e.present.time) {
      ej["start"] = e.start;
      ej["end"] = e.end;
    }
    if (e.present.score) ej["score"] = e.score;
    if (e.present.text) ej["caption"] = e.caption;
    if (!r.sources.empty()) ej["source"] = r.sources[i];
    j["events"].push_back(std::move(ej));
  }
  return j;
}

inline std::string serialize_record(const AnnotationRecord& r) { return record_to_json(r).dump(); }

inline AnnotationRecord record_from_json(const nlohmann::json& j, std::size_t line = 0) {
  using detail::schema_error;
  if (!j.is_object()) schema_error(line, "<record>", "must be a JSON object");
  AnnotationRecord r;
  if (!j.contains("video_id") || !j["video_id"].is_string()) schema_error(line, "video_id", "must be a string");
  r.video_id = j["video_id"].get<std::string>();
  r.duration = detail::number_field(j, "duration", line, "");
  if (!(r.duration >= 0) || !std::isfinite(r.duration)) schema_error(line, "duration", "must be finite and >= 0");
  if (!j.contains("task") || !j["task"].is_string()) schema_error(line, "task", "must be a string");
  const auto task = parse_task_kind(j["task"].get<std::string>());
  if (!task) schema_error(line, "task", "unknown task '" + j["task"].get<std::string>() + "'");
  r.task = *task;
  if (j.contains("instruction")) {
    if (!j["instruction"].is_string()) schema_error(line, "instruction", "must be a string");
    r.instruction = j["instruction"].get<std::string>();
  }
  if (!j.contains("events") || !j["events"].is_array()) schema_error(line, "events", "must be an array");
  const PresentMask mask = mask_for(r.task);
  bool any_source = false, all_source = true;
  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < j["events"].size(); ++i) {
    const auto& ej = j["events"][i];
    const std::string path = "events[" + std::to_string(i) + "].";
    if (!ej.is_object()) schema_error(line, path.substr(0, path.size() - 1), "must be an object");
    Event e;
    e.present = {ej.contains("start") || ej.contains("end"), ej.contains("score"), ej.contains("caption")};
    if (e.present.time) {
      e.start = detail::number_field(ej, "start", line, path);
      e.end = detail::number_field(ej, "end", line, path);
    }
    if (e.present.score) e.score = detail::number_field(ej, "score", line, path);
    if (e.present.text) {
      if (!ej["caption"].is_string()) schema_error(line, path + "caption", "must be a string");
      e.caption = ej["caption"].get<std::string>();
      if (e.caption.empty()) schema_error(line, path + "caption", "must be non-empty when present");
    }
    if (!(e.present == mask)) {
      schema_error(line, path.substr(0, path.size() - 1),
                   "fields do not match the " + std::string(to_string(r.task)) + " task (expects" +
                       (mask.time ? " start/end" : "") + (mask.score ? " score" : "") + (mask.text ? " caption" : "") +
                       ")");
    }
    if (ej.contains("source")) {
      if (!ej["source"].is_number_unsigned()) schema_error(line, path + "source", "must be a non-negative integer");
      sources.push_back(ej["source"].get<std::size_t>());
      any_source = true;
    } else {
      all_source = false;
    }
    r.events.events.push_back(std::move(e));
  }
  if (any_source && !all_source) schema_error(line, "events", "source must be given on every event or none");
  if (any_source) r.sources = std::move(sources);
  return r;
}

inline AnnotationRecord parse_record(std::string_view text, std::size_t line = 0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("line " + std::to_string(line) + ": malformed JSON: " + e.what(), line);
  }
  return record_from_json(j, line);
}

// Non-blank lines of a JSONL stream with 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(std::istream& is) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.emplace_back(n, line);
  }
  return out;
}

inline std::vector<AnnotationRecord> read_records(std::istream& is) {
  std::vector<AnnotationRecord> out;
  for (const auto& [n, line] : read_lines(is)) out.push_back(parse_record(line, n));
  return out;
}

// ---------------------------------------------------------------------------
// Fuzzy similarity

inline std::string normalize_text(std::string_view s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// 100 * (1 - distance / longer length), rounded half up, on normalized text.
inline int fuzzy_similarity(std::string_view a, std::string_view b) {
  const std::string x = normalize_text(a);
  const std::string y = normalize_text(b);
  const std::size_t longest = std::max(x.size(), y.size());
  if (longest == 0) return 100;
  const std::size_t kept = longest - levenshtein(x, y);
  return static_cast<int>((200 * kept + longest) / (2 * longest));
}

// ---------------------------------------------------------------------------
// Caption filter

enum class FilterReason { word_count, similar_captions, event_count, special_characters };

inline std::string_view to_string(FilterReason r) {
  switch (r) {
    case FilterReason::word_count: return "word-count";
    case FilterReason::similar_captions: return "similar-captions";
    case FilterReason::event_count: return "event-count";
    case FilterReason::special_characters: return "special-characters";
  }
  return "unknown";
}

struct FilterOptions {
  std::size_t min_words = 5;
  int similarity_threshold = 70;
  std::size_t min_events = 5;
  std::size_t max_events = 50;
};

struct FilterDecision {
  bool keep = true;
  std::vector<FilterReason> reasons;
  std::vector<std::string> details;
};

inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (unsigned char c : s) {
    const bool ws = std::isspace(c) != 0;
    if (!ws && !in_word) ++n;
    in_word = !ws;
  }
  return n;
}

inline bool allowed_caption_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == ' ' || c == '.';
}

inline FilterDecision filter_dvc(const AnnotationRecord& r, const FilterOptions& opt = {}) {
  FilterDecision d;
  auto reject = [&](FilterReason why, std::string detail) {
    if (std::find(d.reasons.begin(), d.reasons.end(), why) == d.reasons.end()) {
      d.reasons.push_back(why);
      d.details.push_back(std::move(detail));
    }
    d.keep = false;
  };
  const auto& ev = r.events.events;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    const std::size_t w = word_count(ev[i].caption);
    if (w < opt.min_words) {
      reject(FilterReason::word_count, "event " + std::to_string(i) + " caption has " + std::to_string(w) + " words");
    }
  }
  for (std::size_t i = 0; i < ev.size(); ++i) {
    for (std::size_t k = i + 1; k < ev.size(); ++k) {
      const int s = fuzzy_similarity(ev[i].caption, ev[k].caption);
      if (s > opt.similarity_threshold) {
        reject(FilterReason::similar_captions, "events " + std::to_string(i) + " and " + std::to_string(k) +
                                                   " have similarity " + std::to_string(s));
      }
    }
  }
  if (ev.size() < opt.min_events || ev.size() > opt.max_events) {
    reject(FilterReason::event_count, std::to_string(ev.size()) + " events");
  }
  for (std::size_t i = 0; i < ev.size(); ++i) {
    for (unsigned char c : ev[i].caption) {
      if (!allowed_caption_char(c)) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%02x", c);
        reject(FilterReason::special_characters, "event " + std::to_string(i) + " caption contains " + buf);
        break;
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Salient score binning

// Percentile thresholds in thousandths of a percent, paired with scores.
inline constexpr std::array<std::int64_t, 21> kBinThresholdsMilli = {
    2275,  3593,  5480,  8076,  11507, 15866, 21186, 27425, 34458, 42074, 50000,
    57926, 65542, 72575, 78814, 84134, 88493, 91924, 94520, 96407, 97725};

inline std::array<double, 21> bin_thresholds() {
  std::array<double, 21> t{};
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(kBinThresholdsMilli[i]) / 1000.0;
  return t;
}

inline std::array<double, 21> bin_score_values() {
  std::array<double, 21> s{};
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(10 + 2 * static_cast<int>(i)) / 10.0;
  return s;
}

struct BinOptions {
  double floor_score = 1.0;
  double single_clip_score = 3.0;
};

// Score for a clip that beats `lower` of `others` other clips: the score of
// the largest threshold not exceeding the beaten fraction. Integer math
// keeps boundary cases such as exactly 50% on the right side.
inline double bin_fraction(std::size_t lower, std::size_t others, const BinOptions& opt = {}) {
  const auto scores = bin_score_values();
  double out = opt.floor_score;
  for (std::size_t j = 0; j < kBinThresholdsMilli.size(); ++j) {
    if (static_cast<std::int64_t>(lower) * 100000 >= kBinThresholdsMilli[j] * static_cast<std::int64_t>(others)) {
      out = scores[j];
    }
  }
  return out;
}

inline std::vector<double> bin_scores(const std::vector<double>& similarities, const BinOptions& opt = {}) {
  for (double s : similarities) {
    if (!std::isfinite(s)) throw ContractError("bin_scores: non-finite similarity");
  }
  if (similarities.empty()) return {};
  if (similarities.size() == 1) return {opt.single_clip_score};
  std::vector<double> sorted = similarities;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(similarities.size());
  for (double s : similarities) {
    const auto lower = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), s) - sorted.begin());
    out.push_back(bin_fraction(lower, similarities.size() - 1, opt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clip splitting and highlight / summary records

inline std::vector<Event> split_event_into_clips(const Event& e, std::size_t max_clips = 20,
                                                 double min_clip_len = 1.0) {
  if (!(e.end > e.start)) throw ContractError("split_event_into_clips: event must have positive length");
  if (max_clips == 0 || !(min_clip_len > 0)) throw ContractError("split_event_into_clips: bad limits");
  const double len = e.end - e.start;
  const auto by_len = static_cast<std::size_t>(std::floor(len / min_clip_len));
  const std::size_t n = std::clamp<std::size_t>(by_len, 1, max_clips);
  std::vector<Event> clips;
  for (std::size_t i = 0; i < n; ++i) {
    Event c = e;
    c.start = i == 0 ? e.start : e.start + len * static_cast<double>(i) / static_cast<double>(n);
    c.end = i + 1 == n ? e.end : e.start + len * static_cast<double>(i + 1) / static_cast<double>(n);
    clips.push_back(std::move(c));
  }
  return clips;
}

enum class BinScope { event, video };

struct HighlightOptions {
  std::size_t max_clips = 20;
  double min_clip_len = 1.0;
  BinScope scope = BinScope::event;
  BinOptions bins;
};

// Similarity of clip `clip` of event `event`; stands in for a frame/caption
// similarity model.
using ClipSimilarity = std::function<double(std::size_t event, std::size_t clip, const Event& clip_interval)>;

// Dense-caption record -> highlight record: every event is split into
// clips, each clip carries the binned similarity score and its event's
// caption, and `sources` maps clips back to events.
inline AnnotationRecord make_highlight_record(const AnnotationRecord& dvc, const ClipSimilarity& similarity,
                                              const HighlightOptions& opt = {}) {
  if (!mask_for(dvc.task).time || !mask_for(dvc.task).text) {
    throw ContractError("make_highlight_record: source record needs timestamps and captions");
  }
  AnnotationRecord out;
  out.video_id = dvc.video_id;
  out.duration = dvc.duration;
  out.task = TaskKind::vhd;
  out.instruction = dvc.instruction;
  std::vector<double> sims;
  std::vector<std::size_t> event_begin;
  for (std::size_t k = 0; k < dvc.events.events.size(); ++k) {
    event_begin.push_back(out.events.events.size());
    auto clips = split_event_into_clips(dvc.events.events[k], opt.max_clips, opt.min_clip_len);
    for (std::size_t c = 0; c < clips.size(); ++c) {
      sims.push_back(similarity(k, c, clips[c]));
      clips[c].present = mask_for(TaskKind::vhd);
      out.events.events.push_back(std::move(clips[c]));
      out.sources.push_back(k);
    }
  }
  event_begin.push_back(out.events.events.size());
  std::vector<double> scores;
  if (opt.scope == BinScope::video) {
    scores = bin_scores(sims, opt.bins);
  } else {
    for (std::size_t k = 0; k + 1 < event_begin.size(); ++k) {
      std::vector<double> part(sims.begin() + static_cast<std::ptrdiff_t>(event_begin[k]),
                               sims.begin() + static_cast<std::ptrdiff_t>(event_begin[k + 1]));
      const auto b = bin_scores(part, opt.bins);
      scores.insert(scores.end(), b.begin(), b.end());
    }
  }
  for (std::size_t i = 0; i < scores.size(); ++i) out.events.events[i].score = scores[i];
  return out;
}

// Groups of consecutive entries that belong to one source event: by
// `sources` when present, else by runs of identical captions.
inline std::vector<std::pair<std::size_t, std::size_t>> source_groups(const AnnotationRecord& r) {
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  const auto& ev = r.events.events;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= ev.size(); ++i) {
    bool split = i == ev.size();
    if (!split) {
      split = r.sources.empty() ? ev[i].caption != ev[i - 1].caption : r.sources[i] != r.sources[i - 1];
    }
    if (split) {
      if (i > begin) groups.emplace_back(begin, i);
      begin = i;
    }
  }
  return groups;
}

// Highlight record -> summary record: one clip per source event, the
// highest-scored (ties: the earliest).
inline AnnotationRecord select_summary_clips(const AnnotationRecord& vhd) {
  if (vhd.task != TaskKind::vhd) throw ContractError("select_summary_clips: expects a vhd record");
  if (!vhd.sources.empty() && vhd.sources.size() != vhd.events.size()) {
    throw ContractError("select_summary_clips: sources and events differ in length");
  }
  AnnotationRecord out;
  out.video_id = vhd.video_id;
  out.duration = vhd.duration;
  out.task = TaskKind::vs;
  out.instruction = vhd.instruction;
  for (const auto& [b, e] : source_groups(vhd)) {
    std::size_t best = b;
    for (std::size_t i = b + 1; i < e; ++i) {
      if (vhd.events.events[i].score > vhd.events.events[best].score) best = i;
    }
    Event pick = vhd.events.events[best];
    pick.present = mask_for(TaskKind::vs);
    out.events.events.push_back(std::move(pick));
    if (!vhd.sources.empty()) out.sources.push_back(vhd.sources[best]);
  }
  return out;
}

}  // namespace evseq
