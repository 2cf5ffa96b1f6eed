#pragma once

// End-to-end toy run: planted-event data, training, periodic evaluation.
// Configured by presets plus flat key=value overrides.

#include <charconv>
#include <chrono>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "evseq/harness.hpp"
#include "evseq/synthetic.hpp"
#include "evseq/toynet.hpp"

namespace evseq {

struct ToyRunConfig {
  SyntheticConfig data;
  std::size_t train_samples = 1000;
  std::size_t test_samples = 200;
  std::uint64_t seed = 1;  // data uses seed / seed + 1, init uses seed + 2
  nn::ToyNetConfig model;
  nn::TrainConfig train;
  std::size_t eval_every = 0;  // epochs; 0 evaluates only at the end
  std::size_t eval_samples = 50;
  bool constrained = true;
  std::size_t max_events = 8;
  std::size_t max_new_tokens = 128;
};

inline std::vector<std::string> preset_names() { return {"smoke", "default", "overfit"}; }

inline ToyRunConfig toy_preset(std::string_view name) {
  ToyRunConfig c;
  c.model.d_model = 32;
  c.model.layers = 2;
  c.model.heads = 2;
  c.train.learning_rate = 3e-3;
  c.train.batch_size = 8;
  c.train.warmup_ratio = 0.03;
  if (name == "default") {
    c.model.layers = 3;
    c.train.epochs = 60;
    c.train.learning_rate = 1e-2;
    c.train.weight_decay = 0.1;
  } else if (name == "smoke") {
    c.train_samples = 64;
    c.test_samples = 16;
    c.train.epochs = 12;
    c.train.learning_rate = 1e-2;
    c.eval_samples = 16;
  } else if (name == "overfit") {
    c.train_samples = 1;
    c.test_samples = 1;
    c.eval_samples = 1;
    c.train.epochs = 300;
    c.train.batch_size = 1;
    c.train.learning_rate = 3e-3;
    c.train.warmup_ratio = 0.0;
  } else {
    throw ContractError("unknown preset '" + std::string(name) + "'");
  }
  return c;
}

namespace detail {

inline std::size_t parse_count(std::string_view key, std::string_view v, bool allow_zero = false) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || (!allow_zero && out == 0)) {
    throw ContractError("config '" + std::string(key) + "': expected a positive integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline double parse_positive(std::string_view key, std::string_view v, bool allow_zero = false) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out) || out < 0 || (!allow_zero && out == 0)) {
    throw ContractError("config '" + std::string(key) + "': expected a positive number, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_flag(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ContractError("config '" + std::string(key) + "': expected true/false, got '" + std::string(v) + "'");
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  return {"batch_size",   "num_frames",   "frame_sample", "train_epochs",  "learning_rate", "lr_scheduler",
          "model_max_length", "d_model",  "layers",       "heads",         "slots_per_frame", "seed",
          "train_samples", "test_samples", "warmup_ratio", "min_lr_ratio", "grad_clip", "weight_decay", "eval_every",
          "eval_samples", "constrained",  "max_events",   "max_new_tokens", "signal",       "noise"};
}

inline void apply_setting(ToyRunConfig& c, std::string_view key, std::string_view v) {
  using namespace detail;
  if (key == "batch_size") c.train.batch_size = parse_count(key, v);
  else if (key == "num_frames") {
    c.data.frames = parse_count(key, v);
    c.data.duration = static_cast<double>(c.data.frames);
  } else if (key == "frame_sample") {
    if (v != "uniform" && v != "clip_random") throw ContractError("config 'frame_sample': uniform or clip_random");
    c.data.random_clip_sampling = v == "clip_random";
  } else if (key == "train_epochs") c.train.epochs = parse_count(key, v);
  else if (key == "learning_rate") c.train.learning_rate = parse_positive(key, v);
  else if (key == "lr_scheduler") {
    if (v != "cosine" && v != "constant") throw ContractError("config 'lr_scheduler': cosine or constant");
    c.train.cosine = v == "cosine";
  } else if (key == "model_max_length") c.model.max_positions = parse_count(key, v);
  else if (key == "d_model") c.model.d_model = parse_count(key, v);
  else if (key == "layers") c.model.layers = parse_count(key, v);
  else if (key == "heads") c.model.heads = parse_count(key, v);
  else if (key == "slots_per_frame") c.model.slots_per_frame = parse_count(key, v);
  else if (key == "seed") c.seed = parse_count(key, v, true);
  else if (key == "train_samples") c.train_samples = parse_count(key, v);
  else if (key == "test_samples") c.test_samples = parse_count(key, v);
  else if (key == "warmup_ratio") c.train.warmup_ratio = parse_positive(key, v, true);
  else if (key == "min_lr_ratio") c.train.min_lr_ratio = parse_positive(key, v, true);
  else if (key == "grad_clip") c.train.grad_clip = parse_positive(key, v, true);
  else if (key == "weight_decay") c.train.weight_decay = parse_positive(key, v, true);
  else if (key == "eval_every") c.eval_every = parse_count(key, v, true);
  else if (key == "eval_samples") c.eval_samples = parse_count(key, v);
  else if (key == "constrained") c.constrained = parse_flag(key, v);
  else if (key == "max_events") c.max_events = parse_count(key, v);
  else if (key == "max_new_tokens") c.max_new_tokens = parse_count(key, v);
  else if (key == "signal") c.data.signal = parse_positive(key, v);
  else if (key == "noise") c.data.noise = parse_positive(key, v, true);
  else throw ContractError("unknown config key '" + std::string(key) + "'");
}

// "key=value" (also "key = value"); '#' starts a comment.
inline void apply_setting_line(ToyRunConfig& c, std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ContractError("config line without '=': '" + std::string(line) + "'");
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return std::string_view{};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  apply_setting(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

inline void load_config(ToyRunConfig& c, std::istream& is) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      apply_setting_line(c, line);
    } catch (const ContractError& e) {
      throw ContractError("config line " + std::to_string(n) + ": " + e.what());
    }
  }
}

inline std::map<std::string, std::string> config_values(const ToyRunConfig& c) {
  auto num = [](double v) {
    char b[32];
    const auto r = std::to_chars(b, b + sizeof b, v);
    return std::string(b, r.ptr);
  };
  return {{"batch_size", std::to_string(c.train.batch_size)},
          {"num_frames", std::to_string(c.data.frames)},
          {"frame_sample", c.data.random_clip_sampling ? "clip_random" : "uniform"},
          {"train_epochs", std::to_string(c.train.epochs)},
          {"learning_rate", num(c.train.learning_rate)},
          {"lr_scheduler", c.train.cosine ? "cosine" : "constant"},
          {"model_max_length", std::to_string(c.model.max_positions)},
          {"d_model", std::to_string(c.model.d_model)},
          {"layers", std::to_string(c.model.layers)},
          {"heads", std::to_string(c.model.heads)},
          {"slots_per_frame", std::to_string(c.model.slots_per_frame)},
          {"seed", std::to_string(c.seed)},
          {"train_samples", std::to_string(c.train_samples)},
          {"test_samples", std::to_string(c.test_samples)},
          {"warmup_ratio", num(c.train.warmup_ratio)},
          {"min_lr_ratio", num(c.train.min_lr_ratio)},
          {"grad_clip", num(c.train.grad_clip)},
          {"weight_decay", num(c.train.weight_decay)},
          {"eval_every", std::to_string(c.eval_every)},
          {"eval_samples", std::to_string(c.eval_samples)},
          {"constrained", c.constrained ? "true" : "false"},
          {"max_events", std::to_string(c.max_events)},
          {"max_new_tokens", std::to_string(c.max_new_tokens)},
          {"signal", num(c.data.signal)},
          {"noise", num(c.data.noise)}};
}

inline void write_config(std::ostream& os, const ToyRunConfig& c) {
  for (const auto& [k, v] : config_values(c)) os << k << " = " << v << '\n';
}

struct ToyData {
  SyntheticDataset train, test;
};

inline ToyData make_toy_data(const ToyRunConfig& c) {
  SyntheticConfig d = c.data;
  d.patches = c.model.patches;
  d.feature_dim = c.model.feature_dim;
  return {make_synthetic(d, c.train_samples, c.seed), make_synthetic(d, c.test_samples, c.seed + 1)};
}

inline GenerateOptions toy_generate_options(const ToyRunConfig& c) {
  GenerateOptions g;
  g.constrained = c.constrained;
  g.max_events = c.max_events;
  g.max_tokens = c.max_new_tokens;
  return g;
}

struct ToyRunResult {
  nn::ToyNetParams<float> params;
  nn::TrainHistory history;
  EvalReport test_report;
  std::vector<Response> test_predictions;
  std::size_t test_truncated = 0;
  double seconds = 0.0;
};

inline ToyRunResult run_toy(const ToyRunConfig& c, const ToyData& data, std::ostream* log = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  ToyRunResult out;
  out.params = nn::init_params<float>(c.model, c.seed + 2);
  const auto examples = make_examples(data.train.samples, training_build_options(c.model.slots_per_frame));
  nn::TrainConfig tc = c.train;
  tc.seed = c.seed + 3;
  const auto gen = toy_generate_options(c);
  const std::vector<VideoSample> probe(data.test.samples.begin(),
                                       data.test.samples.begin() +
                                           static_cast<std::ptrdiff_t>(std::min(c.eval_samples, data.test.size())));
  auto on_epoch = [&](std::size_t epoch, const nn::ToyNetParams<float>& p, nn::EpochRecord& rec) {
    if (c.eval_every == 0 || epoch % c.eval_every != 0) return;
    const auto h = evaluate_model(p, probe, gen, data.test.config.task);
    for (const auto& [k, v] : h.report.values) rec.eval[k] = v;
  };
  out.history = nn::train<float>(out.params, examples, tc, on_epoch, log);
  const auto h = evaluate_model(out.params, data.test.samples, gen, data.test.config.task);
  out.test_report = h.report;
  out.test_predictions = h.predictions;
  out.test_truncated = h.truncated;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace evseq
