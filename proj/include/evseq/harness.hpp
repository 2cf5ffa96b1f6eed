#pragma once

// Glue between the toy network, the decoder and the metrics: build
// training examples, generate predictions for a split and score them.

#include <vector>

#include "evseq/decoder.hpp"
#include "evseq/metrics.hpp"
#include "evseq/sequence.hpp"
#include "evseq/toynet.hpp"

namespace evseq {

inline BuildOptions training_build_options(std::size_t slots_per_frame = kDefaultSlotsPerFrame) {
  BuildOptions b;
  b.slots_per_frame = slots_per_frame;
  b.end_sentinel = true;
  return b;
}

inline std::vector<nn::Example> make_examples(const std::vector<VideoSample>& samples, const BuildOptions& opt) {
  std::vector<nn::Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({&s, build_sequence(s, s.gold, opt)});
  return out;
}

struct HarnessResult {
  std::vector<Response> predictions;
  std::size_t truncated = 0;
  std::size_t diagnostics = 0;
  EvalReport report;
};

inline EvalReport score_responses(const std::vector<VideoSample>& samples, const std::vector<Response>& preds,
                                  TaskKind task) {
  if (samples.size() != preds.size()) throw ContractError("score_responses: length mismatch");
  std::vector<EvalRecord> p, g;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    p.push_back({samples[i].video_id, preds[i].events});
    g.push_back({samples[i].video_id, samples[i].gold.events});
  }
  return evaluate_records(p, g, task);
}

template <class S>
HarnessResult evaluate_model(const nn::ToyNetParams<S>& params, const std::vector<VideoSample>& samples,
                             const GenerateOptions& gen, TaskKind task) {
  HarnessResult out;
  BuildOptions b;
  b.slots_per_frame = params.config.slots_per_frame;
  for (const auto& s : samples) {
    const SequenceLayout prompt = build_prompt(s, b);
    nn::ToyNetScorer<S> scorer(params, s);
    GenerateOptions g = gen;
    const std::size_t room = params.config.max_positions > prompt.size() ? params.config.max_positions - prompt.size() : 0;
    g.max_tokens = std::min(g.max_tokens, room);
    GenerateResult r = generate(scorer, prompt, g);
    out.truncated += r.truncated;
    out.diagnostics += r.diagnostics.size();
    out.predictions.push_back(std::move(r.response));
  }
  out.report = score_responses(samples, out.predictions, task);
  return out;
}

}  // namespace evseq
