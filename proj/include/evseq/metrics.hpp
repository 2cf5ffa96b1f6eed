#pragma once

// Interval metrics for temporal grounding: IOU, R@1, mIOU, event F1,
// interval mAP and HIT@1, plus prediction/gold JSONL loading.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "evseq/errors.hpp"
#include "evseq/event.hpp"

namespace evseq {

struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct ScoredInterval {
  Interval interval;
  double score = 0.0;
};

struct ScoredClip {
  Interval interval;
  double predicted_score = 0.0;
  std::optional<double> gold_score;
};

inline constexpr double kDefaultHitThreshold = 4.0;
inline const std::vector<double> kF1Thresholds = {0.3, 0.5, 0.7, 0.9};
inline const std::vector<double> kMapThresholds = {0.5, 0.75};

inline double iou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return inter / uni;
}

inline Interval interval_of(const Event& e) { return {e.start, e.end}; }

inline double recall_at_1(std::span<const Interval> preds, std::span<const Interval> gold, double threshold) {
  if (preds.size() != gold.size()) throw ContractError("recall_at_1: prediction and gold lists differ in length");
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += iou(preds[i], gold[i]) >= threshold;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gold.size());
}

inline double mean_iou(std::span<const Interval> preds, std::span<const Interval> gold) {
  if (preds.size() != gold.size()) throw ContractError("mean_iou: prediction and gold lists differ in length");
  if (gold.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) s += iou(preds[i], gold[i]);
  return 100.0 * s / static_cast<double>(gold.size());
}

// Number of one-to-one matches with IOU >= threshold, taking pairs in
// descending IOU order (ties: lower prediction index, then lower gold index).
inline std::size_t greedy_matches(std::span<const Interval> pred, std::span<const Interval> gold, double threshold) {
  struct Pair {
    double v;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < gold.size(); ++j) {
      const double v = iou(pred[i], gold[j]);
      if (v >= threshold) pairs.push_back({v, i, j});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.v > b.v; });
  std::vector<char> used_p(pred.size(), 0), used_g(gold.size(), 0);
  std::size_t m = 0;
  for (const auto& p : pairs) {
    if (used_p[p.i] || used_g[p.j]) continue;
    used_p[p.i] = used_g[p.j] = 1;
    ++m;
  }
  return m;
}

inline double f1_from_matches(std::size_t matches, std::size_t n_pred, std::size_t n_gold) {
  if (n_pred == 0 && n_gold == 0) return 1.0;
  if (n_pred == 0 || n_gold == 0 || matches == 0) return 0.0;
  const double p = static_cast<double>(matches) / static_cast<double>(n_pred);
  const double r = static_cast<double>(matches) / static_cast<double>(n_gold);
  return 2 * p * r / (p + r);
}

// Mean over thresholds of the greedy-matching F1, x100.
inline double event_f1(std::span<const Interval> pred, std::span<const Interval> gold,
                       std::span<const double> thresholds = kF1Thresholds) {
  if (thresholds.empty()) throw ContractError("event_f1: no thresholds");
  double s = 0.0;
  for (double t : thresholds) s += f1_from_matches(greedy_matches(pred, gold, t), pred.size(), gold.size());
  return 100.0 * s / static_cast<double>(thresholds.size());
}

// All-point interpolated average precision at one IOU threshold, x100.
// Predictions are ranked by descending score (ties keep input order); each
// claims the unmatched gold interval of highest IOU if that IOU >= threshold.
inline double average_precision(std::span<const ScoredInterval> pred, std::span<const Interval> gold, double threshold) {
  if (gold.empty()) return pred.empty() ? 100.0 : 0.0;
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a].score > pred[b].score; });
  std::vector<char> used(gold.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& p = pred[order[r]];
    double best = -1.0;
    std::size_t best_j = gold.size();
    for (std::size_t j = 0; j < gold.size(); ++j) {
      if (used[j]) continue;
      const double v = iou(p.interval, gold[j]);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best_j < gold.size() && best >= threshold) {
      used[best_j] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gold.size()));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return 100.0 * ap;
}

inline double interval_map(std::span<const ScoredInterval> pred, std::span<const Interval> gold,
                           std::span<const double> thresholds = kMapThresholds) {
  if (thresholds.empty()) throw ContractError("interval_map: no thresholds");
  double s = 0.0;
  for (double t : thresholds) s += average_precision(pred, gold, t);
  return s / static_cast<double>(thresholds.size());
}

// 1 when the top predicted clip (ties: earliest start, then input order)
// is a highlight, i.e. its gold score reaches the threshold.
inline int hit_at_1_video(std::span<const ScoredClip> clips, double gold_threshold = kDefaultHitThreshold) {
  if (clips.empty()) throw ContractError("hit_at_1: video without clips");
  std::size_t best = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (!clips[i].gold_score) throw ContractError("hit_at_1: clip " + std::to_string(i) + " has no gold score");
    const auto& c = clips[i];
    const auto& b = clips[best];
    if (c.predicted_score > b.predicted_score ||
        (c.predicted_score == b.predicted_score && c.interval.start < b.interval.start)) {
      best = i;
    }
  }
  return *clips[best].gold_score >= gold_threshold ? 1 : 0;
}

inline double hit_at_1(std::span<const std::vector<ScoredClip>> videos, double gold_threshold = kDefaultHitThreshold) {
  if (videos.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& v : videos) hits += static_cast<std::size_t>(hit_at_1_video(v, gold_threshold));
  return 100.0 * static_cast<double>(hits) / static_cast<double>(videos.size());
}

// Gold score of a predicted interval: the score of the gold event with the
// highest IOU (earliest on ties); 0 when it overlaps none.
inline double gold_score_for(const Interval& clip, std::span<const Event> gold) {
  double best = 0.0;
  double score = 0.0;
  for (const auto& g : gold) {
    const double v = iou(clip, interval_of(g));
    if (v > best) {
      best = v;
      score = g.score;
    }
  }
  return score;
}

// For each gold event, the first prediction with the same caption is its
// top-1 answer; a missing caption counts as IOU 0.
inline std::pair<std::vector<Interval>, std::vector<Interval>> caption_queries(std::span<const Event> pred,
                                                                               std::span<const Event> gold) {
  std::vector<Interval> p, g;
  for (const auto& ge : gold) {
    g.push_back(interval_of(ge));
    auto it = std::find_if(pred.begin(), pred.end(), [&](const Event& e) { return e.caption == ge.caption; });
    // An interval that overlaps nothing stands in for "no answer".
    p.push_back(it == pred.end() ? Interval{-2.0, -1.0} : interval_of(*it));
  }
  return {p, g};
}

// ---------------------------------------------------------------------------
// Prediction / gold records

struct EvalRecord {
  std::string video_id;
  std::vector<Event> events;
};

// Events may be objects {start, end, score?, caption?} or arrays
// [start, end, score?, caption?].
inline Event event_from_json(const nlohmann::json& j) {
  Event e;
  e.present = {false, false, false};
  if (j.is_array()) {
    if (j.size() < 2 || j.size() > 4) throw ParseError("event array must have 2 to 4 entries", 0);
    if (!j[0].is_number() || !j[1].is_number()) throw ParseError("event start/end must be numbers", 0);
    e.start = j[0].get<double>();
    e.end = j[1].get<double>();
    e.present.time = true;
    if (j.size() >= 3 && !j[2].is_null()) {
      if (!j[2].is_number()) throw ParseError("event score must be a number", 0);
      e.score = j[2].get<double>();
      e.present.score = true;
    }
    if (j.size() == 4 && !j[3].is_null()) {
      if (!j[3].is_string()) throw ParseError("event caption must be a string", 0);
      e.caption = j[3].get<std::string>();
      e.present.text = !e.caption.empty();
    }
    return e;
  }
  if (!j.is_object()) throw ParseError("event must be an object or array", 0);
  if (j.contains("start") != j.contains("end")) throw ParseError("event needs both start and end", 0);
  if (j.contains("start")) {
    if (!j["start"].is_number() || !j["end"].is_number()) throw ParseError("event start/end must be numbers", 0);
    e.start = j["start"].get<double>();
    e.end = j["end"].get<double>();
    e.present.time = true;
  }
  if (j.contains("score")) {
    if (!j["score"].is_number()) throw ParseError("event score must be a number", 0);
    e.score = j["score"].get<double>();
    e.present.score = true;
  }
  if (j.contains("caption")) {
    if (!j["caption"].is_string()) throw ParseError("event caption must be a string", 0);
    e.caption = j["caption"].get<std::string>();
    e.present.text = !e.caption.empty();
  }
  return e;
}

inline EvalRecord eval_record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record must be a JSON object", 0);
  if (!j.contains("video_id") || !j["video_id"].is_string()) throw ParseError("record needs a string video_id", 0);
  if (!j.contains("events") || !j["events"].is_array()) throw ParseError("record needs an events array", 0);
  EvalRecord r;
  r.video_id = j["video_id"].get<std::string>();
  for (const auto& e : j["events"]) r.events.push_back(event_from_json(e));
  return r;
}

struct EvalReport {
  std::map<std::string, double> values;
  std::size_t videos = 0;

  std::string text() const {
    std::string out;
    char buf[96];
    for (const auto& [k, v] : values) {
      std::snprintf(buf, sizeof buf, "%s=%.4f\n", k.c_str(), v);
      out += buf;
    }
    return out;
  }

  nlohmann::json json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values) j[k] = v;
    j["videos"] = videos;
    return j;
  }
};

// Task-level evaluation over aligned prediction / gold records.
//  mr:      R@1@{0.5,0.7} and mIOU of each record's first prediction.
//  dvc:     event F1; R@1@{0.5,0.7} with caption queries.
//  vhd/vs:  mAP@{0.5,0.75}, HIT@1 and event F1.
inline EvalReport evaluate_records(std::span<const EvalRecord> pred, std::span<const EvalRecord> gold, TaskKind task,
                                   double hit_threshold = kDefaultHitThreshold) {
  std::map<std::string, const EvalRecord*> by_id;
  for (const auto& p : pred) {
    if (!by_id.emplace(p.video_id, &p).second) throw ContractError("duplicate prediction for '" + p.video_id + "'");
  }
  const EvalRecord empty;
  EvalReport rep;
  rep.videos = gold.size();
  std::vector<Interval> top1, gold1, capp, capg;
  double f1 = 0.0, map = 0.0;
  std::vector<std::vector<ScoredClip>> clips;
  std::size_t hit_videos = 0;
  for (const auto& g : gold) {
    auto it = by_id.find(g.video_id);
    const EvalRecord& p = it == by_id.end() ? empty : *it->second;
    std::vector<Interval> pi, gi;
    for (const auto& e : p.events) pi.push_back(interval_of(e));
    for (const auto& e : g.events) gi.push_back(interval_of(e));
    switch (task) {
      case TaskKind::mr:
        if (g.events.empty()) throw ContractError("mr gold record '" + g.video_id + "' has no event");
        gold1.push_back(gi.front());
        top1.push_back(pi.empty() ? Interval{-2.0, -1.0} : pi.front());
        break;
      case TaskKind::dvc: {
        f1 += event_f1(pi, gi);
        auto [a, b] = caption_queries(p.events, g.events);
        capp.insert(capp.end(), a.begin(), a.end());
        capg.insert(capg.end(), b.begin(), b.end());
        break;
      }
      case TaskKind::vhd:
      case TaskKind::vs:
      case TaskKind::general: {
        std::vector<ScoredInterval> si;
        std::vector<ScoredClip> sc;
        for (const auto& e : p.events) {
          si.push_back({interval_of(e), e.score});
          sc.push_back({interval_of(e), e.score, gold_score_for(interval_of(e), g.events)});
        }
        map += interval_map(si, gi);
        f1 += event_f1(pi, gi);
        if (!sc.empty()) clips.push_back(std::move(sc));
        ++hit_videos;
        break;
      }
    }
  }
  const double n = gold.empty() ? 1.0 : static_cast<double>(gold.size());
  switch (task) {
    case TaskKind::mr:
      rep.values["R1@0.5"] = recall_at_1(top1, gold1, 0.5);
      rep.values["R1@0.7"] = recall_at_1(top1, gold1, 0.7);
      rep.values["mIOU"] = mean_iou(top1, gold1);
      break;
    case TaskKind::dvc:
      rep.values["F1"] = f1 / n;
      rep.values["R1@0.5"] = recall_at_1(capp, capg, 0.5);
      rep.values["R1@0.7"] = recall_at_1(capp, capg, 0.7);
      break;
    default: {
      rep.values["mAP"] = map / n;
      rep.values["F1"] = f1 / n;
      // Videos without any prediction count as misses.
      const double hits = hit_at_1(clips, hit_threshold) * static_cast<double>(clips.size()) / 100.0;
      rep.values["HIT@1"] = hit_videos ? 100.0 * hits / static_cast<double>(hit_videos) : 0.0;
      break;
    }
  }
  return rep;
}

}  // namespace evseq
