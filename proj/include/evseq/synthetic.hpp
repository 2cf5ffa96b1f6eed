#pragma once

// Planted-event videos: frames inside a gold event carry a class prototype
// plus noise, background frames carry noise only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "evseq/errors.hpp"
#include "evseq/event.hpp"
#include "evseq/pipeline.hpp"
#include "evseq/toynet.hpp"

namespace evseq {

struct SyntheticConfig {
  std::size_t frames = 64;
  std::size_t patches = 4;
  std::size_t feature_dim = 16;
  double duration = 64.0;
  std::size_t min_events = 1;
  std::size_t max_events = 3;
  std::size_t min_event_frames = 4;
  std::size_t max_event_frames = 12;
  std::size_t min_gap_frames = 2;
  double signal = 1.5;   // prototype entry scale
  double noise = 1.0;    // per-entry noise
  // One random frame per equal clip instead of clip starts.
  bool random_clip_sampling = false;
  std::vector<std::string> classes = {"cut", "wash", "stir", "pour", "fry", "peel"};
  std::uint64_t prototype_seed = 7;
  TaskKind task = TaskKind::dvc;
  std::string instruction = "find events";

  void validate() const {
    if (frames < 2 || patches == 0 || feature_dim == 0) throw ContractError("synthetic: bad feature shape");
    if (!(duration > 0) || duration > kMaxTimestamp) throw ContractError("synthetic: bad duration");
    if (min_events == 0 || min_events > max_events) throw ContractError("synthetic: bad event count range");
    if (min_event_frames == 0 || min_event_frames > max_event_frames) throw ContractError("synthetic: bad event length");
    if (classes.size() < max_events) throw ContractError("synthetic: fewer classes than events per video");
    const std::size_t need = max_events * (max_event_frames + min_gap_frames) + 1;
    if (need > frames) throw ContractError("synthetic: events cannot fit in the video");
  }
};

struct SyntheticDataset {
  SyntheticConfig config;
  std::uint64_t seed = 0;
  std::vector<VideoSample> samples;
  std::vector<std::vector<int>> frame_labels;  // class index per frame, -1 for background
  std::vector<std::vector<double>> prototypes;  // class -> patches * dim values

  std::size_t size() const { return samples.size(); }
};

inline std::vector<std::vector<double>> make_prototypes(const SyntheticConfig& cfg) {
  nn::Rng rng(cfg.prototype_seed);
  std::vector<std::vector<double>> protos(cfg.classes.size(), std::vector<double>(cfg.patches * cfg.feature_dim));
  for (auto& p : protos) {
    for (double& v : p) v = rng.normal() * cfg.signal;
  }
  return protos;
}

namespace detail {

// Places k non-overlapping events as (first frame, length) pairs with at
// least min_gap background frames between them and at least one
// background frame after the last.
inline std::vector<std::pair<std::size_t, std::size_t>> place_events(const SyntheticConfig& cfg, std::size_t k,
                                                                      nn::Rng& rng) {
  std::vector<std::size_t> lens(k);
  for (auto& l : lens) l = cfg.min_event_frames + rng.below(cfg.max_event_frames - cfg.min_event_frames + 1);
  std::size_t used = cfg.min_gap_frames * (k - 1) + 1;
  for (auto l : lens) used += l;
  // Distribute the slack over k + 1 gaps (before, between, after).
  std::size_t slack = cfg.frames - used;
  std::vector<std::size_t> cuts(k);
  for (auto& c : cuts) c = rng.below(slack + 1);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0;
  std::size_t prev_cut = 0;
  for (std::size_t i = 0; i < k; ++i) {
    pos += cuts[i] - prev_cut;
    prev_cut = cuts[i];
    out.emplace_back(pos, lens[i]);
    pos += lens[i] + cfg.min_gap_frames;
  }
  return out;
}

}  // namespace detail

inline std::vector<double> sample_frame_times(const SyntheticConfig& cfg, nn::Rng& rng) {
  const double step = cfg.duration / static_cast<double>(cfg.frames);
  std::vector<double> t(cfg.frames);
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    const double offset = cfg.random_clip_sampling ? rng.uniform() : 0.0;
    t[i] = round1((static_cast<double>(i) + offset) * step);
    if (i > 0 && t[i] <= t[i - 1]) t[i] = round1(t[i - 1] + 0.1);
  }
  return t;
}

inline SyntheticDataset make_synthetic(const SyntheticConfig& cfg, std::size_t count, std::uint64_t seed) {
  cfg.validate();
  SyntheticDataset ds;
  ds.config = cfg;
  ds.seed = seed;
  ds.prototypes = make_prototypes(cfg);
  nn::Rng rng(seed);
  const PresentMask mask = mask_for(cfg.task);
  for (std::size_t n = 0; n < count; ++n) {
    VideoSample s;
    s.video_id = "synth-" + std::to_string(seed) + "-" + std::to_string(n);
    s.duration = cfg.duration;
    s.instruction = cfg.instruction;
    s.task = cfg.task;
    s.frame_times = sample_frame_times(cfg, rng);
    const std::size_t k = cfg.min_events + rng.below(cfg.max_events - cfg.min_events + 1);
    auto placed = detail::place_events(cfg, k, rng);
    std::vector<std::size_t> cls(cfg.classes.size());
    for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = i;
    rng.shuffle(cls);
    std::vector<int> labels(cfg.frames, -1);
    for (std::size_t i = 0; i < k; ++i) {
      const auto [first, len] = placed[i];
      for (std::size_t f = first; f < first + len; ++f) labels[f] = static_cast<int>(cls[i]);
      Event e;
      e.start = s.frame_times[first];
      e.end = s.frame_times[first + len];
      e.caption = cfg.classes[cls[i]];
      e.present = mask;
      if (!mask.time) e.start = e.end = 0.0;
      if (mask.score) e.score = 4.0;
      if (!mask.text) e.caption.clear();
      s.gold.events.push_back(std::move(e));
    }
    s.features = FrameFeatures(cfg.frames, cfg.patches, cfg.feature_dim);
    for (std::size_t f = 0; f < cfg.frames; ++f) {
      for (std::size_t j = 0; j < cfg.patches * cfg.feature_dim; ++j) {
        double v = rng.normal() * cfg.noise;
        if (labels[f] >= 0) v += ds.prototypes[static_cast<std::size_t>(labels[f])][j];
        s.features.values[f * cfg.patches * cfg.feature_dim + j] = v;
      }
    }
    ds.samples.push_back(std::move(s));
    ds.frame_labels.push_back(std::move(labels));
  }
  return ds;
}

// Nearest-prototype frame classifier (background = the zero vector).
inline int classify_frame(const SyntheticDataset& ds, const VideoSample& s, std::size_t frame) {
  const std::size_t n = ds.config.patches * ds.config.feature_dim;
  const double* x = s.features.frame(frame);
  double best = 0.0;
  for (std::size_t j = 0; j < n; ++j) best += x[j] * x[j];
  int label = -1;
  for (std::size_t c = 0; c < ds.prototypes.size(); ++c) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += (x[j] - ds.prototypes[c][j]) * (x[j] - ds.prototypes[c][j]);
    if (d < best) {
      best = d;
      label = static_cast<int>(c);
    }
  }
  return label;
}

struct OracleReport {
  double frame_accuracy = 0.0;  // fraction of frames labelled correctly
  double event_accuracy = 0.0;  // fraction of videos whose events are recovered exactly
};

// Recovers events as maximal runs of one class label.
inline Response oracle_events(const SyntheticDataset& ds, const VideoSample& s) {
  Response r;
  const PresentMask mask = mask_for(ds.config.task);
  int run = -1;
  std::size_t begin = 0;
  for (std::size_t f = 0; f <= s.features.frames; ++f) {
    const int label = f < s.features.frames ? classify_frame(ds, s, f) : -1;
    if (label != run) {
      if (run >= 0) {
        Event e;
        e.start = s.frame_times[begin];
        e.end = f < s.frame_times.size() ? s.frame_times[f] : s.duration;
        e.caption = ds.config.classes[static_cast<std::size_t>(run)];
        e.present = mask;
        if (mask.score) e.score = 4.0;
        r.events.push_back(std::move(e));
      }
      run = label;
      begin = f;
    }
  }
  return r;
}

inline OracleReport oracle_accuracy(const SyntheticDataset& ds) {
  OracleReport rep;
  std::size_t frames = 0, correct = 0, videos = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    for (std::size_t f = 0; f < s.features.frames; ++f) {
      ++frames;
      correct += classify_frame(ds, s, f) == ds.frame_labels[i][f];
    }
    videos += oracle_events(ds, s) == s.gold;
  }
  rep.frame_accuracy = frames ? static_cast<double>(correct) / static_cast<double>(frames) : 0.0;
  rep.event_accuracy = ds.samples.empty() ? 0.0 : static_cast<double>(videos) / static_cast<double>(ds.samples.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Sample files: one JSON object per line, the annotation record fields plus
// frame_times and features {frames, patches, dim, values}.

inline nlohmann::json sample_to_json(const VideoSample& s) {
  AnnotationRecord r;
  r.video_id = s.video_id;
  r.duration = s.duration;
  r.task = s.task;
  r.instruction = s.instruction;
  r.events = s.gold;
  nlohmann::json j = record_to_json(r);
  j["frame_times"] = s.frame_times;
  j["features"] = {{"frames", s.features.frames},
                   {"patches", s.features.patches},
                   {"dim", s.features.dim},
                   {"values", s.features.values}};
  return j;
}

inline VideoSample sample_from_json(const nlohmann::json& j, std::size_t line = 0) {
  const AnnotationRecord r = record_from_json(j, line);
  VideoSample s;
  s.video_id = r.video_id;
  s.duration = r.duration;
  s.task = r.task;
  s.instruction = r.instruction;
  s.gold = r.events;
  if (!j.contains("frame_times") || !j["frame_times"].is_array()) {
    detail::schema_error(line, "frame_times", "must be an array");
  }
  try {
    s.frame_times = j["frame_times"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    detail::schema_error(line, "frame_times", "must hold numbers");
  }
  for (std::size_t i = 1; i < s.frame_times.size(); ++i) {
    if (!(s.frame_times[i] > s.frame_times[i - 1])) detail::schema_error(line, "frame_times", "must be strictly increasing");
  }
  if (!j.contains("features") || !j["features"].is_object()) detail::schema_error(line, "features", "must be an object");
  const auto& f = j["features"];
  try {
    s.features.frames = f.at("frames").get<std::size_t>();
    s.features.patches = f.at("patches").get<std::size_t>();
    s.features.dim = f.at("dim").get<std::size_t>();
    s.features.values = f.at("values").get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    detail::schema_error(line, "features", "needs integer frames/patches/dim and numeric values");
  }
  if (s.features.values.size() != s.features.frames * s.features.patches * s.features.dim) {
    detail::schema_error(line, "features.values", "size does not match frames x patches x dim");
  }
  if (s.features.frames != s.frame_times.size()) {
    detail::schema_error(line, "features.frames", "differs from the number of frame_times");
  }
  return s;
}

inline void write_samples(std::ostream& os, const std::vector<VideoSample>& samples) {
  for (const auto& s : samples) os << sample_to_json(s).dump() << '\n';
}

inline std::vector<VideoSample> read_samples(std::istream& is) {
  std::vector<VideoSample> out;
  for (const auto& [n, line] : read_lines(is)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(n) + ": malformed JSON: " + e.what(), n);
    }
    out.push_back(sample_from_json(j, n));
  }
  return out;
}

}  // namespace evseq
