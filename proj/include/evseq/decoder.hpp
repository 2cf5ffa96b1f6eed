#pragma once

// Generation-time state machine: cycles the decoding heads time -> score ->
// text, switching whenever a head emits <sync>. Optionally constrains each
// head to the fixed-width grammar and to what the token budget can still
// close cleanly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <vector>

#include <json.hpp>

#include "evseq/errors.hpp"
#include "evseq/sequence.hpp"
#include "evseq/tokenizers.hpp"

namespace evseq {

struct DecodeState {
  Head active = Head::time;
  std::size_t event_index = 0;          // completed events
  std::size_t digits_emitted = 0;       // tokens of the value being written
  std::size_t values_in_segment = 0;    // values closed by <sep> in the current segment
  std::size_t segment_length = 0;       // non-terminal tokens in the current segment
  bool event_empty = true;              // every closed segment of this event was a placeholder
  bool finished = false;
  bool ended_by_sentinel = false;
  std::size_t max_events = kDefaultMaxEvents;
  TokenSeq emitted;
};

inline DecodeState initial_state(std::size_t max_events = kDefaultMaxEvents) {
  DecodeState s;
  s.max_events = max_events;
  return s;
}

inline void advance(DecodeState& s, int token) {
  if (s.finished) throw ContractError("step after generation finished");
  const TokenTag tag = tag_for(s.active);
  if (token < 0 || token >= vocab_size(tag)) {
    throw ContractError("token " + std::to_string(token) + " is not in the " + std::string(to_string(s.active)) +
                        " head vocabulary");
  }
  s.emitted.push_back(tag, token);

  if (s.active == Head::text) {
    if (token == text_vocab::kSync || token == text_vocab::kEos) {
      if (s.segment_length > 0) s.event_empty = false;
      const bool sentinel = s.event_empty && (s.event_index >= 1 || token == text_vocab::kEos);
      if (sentinel) {
        s.finished = true;
        s.ended_by_sentinel = true;
      } else {
        ++s.event_index;
        if (token == text_vocab::kEos || s.event_index >= s.max_events) s.finished = true;
      }
      s.active = Head::time;
      s.segment_length = 0;
      s.event_empty = true;
    } else {
      ++s.segment_length;
    }
    return;
  }

  if (token == digit_vocab::kSync) {
    if (s.segment_length > 0) s.event_empty = false;
    s.active = next_head(s.active);
    s.segment_length = 0;
    s.digits_emitted = 0;
    s.values_in_segment = 0;
  } else if (token == digit_vocab::kSep) {
    ++s.segment_length;
    ++s.values_in_segment;
    s.digits_emitted = 0;
  } else {
    ++s.segment_length;
    ++s.digits_emitted;
  }
}

// Copy of the grammar position without the emitted tokens.
inline DecodeState without_history(const DecodeState& s) {
  DecodeState c;
  c.active = s.active;
  c.event_index = s.event_index;
  c.digits_emitted = s.digits_emitted;
  c.values_in_segment = s.values_in_segment;
  c.segment_length = s.segment_length;
  c.event_empty = s.event_empty;
  c.finished = s.finished;
  c.ended_by_sentinel = s.ended_by_sentinel;
  c.max_events = s.max_events;
  return c;
}

inline DecodeState step(DecodeState s, int token) {
  advance(s, token);
  return s;
}

namespace detail {

inline std::size_t value_width(Head h) { return h == Head::time ? kTimestampWidth : kScoreWidth; }
inline std::size_t max_values(Head h) { return h == Head::time ? 2 : 1; }

inline std::size_t sentinel_cost(const DecodeState& s, std::size_t events_after) {
  return events_after >= s.max_events ? 0 : 3;
}

// Fewest constrained-grammar tokens that bring `s` to finished.
inline std::size_t min_tokens_to_finish(const DecodeState& s) {
  if (s.finished) return 0;
  const std::size_t k = s.event_index;
  switch (s.active) {
    case Head::time:
      if (s.segment_length == 0) {
        // Either the end sentinel directly, or the first event must exist.
        if (k >= 1) return 3;
        return 4 + sentinel_cost(s, 1);
      } else {
        const std::size_t width = value_width(Head::time);
        std::size_t close = (width - std::min(width, s.digits_emitted)) + 1;
        if (s.values_in_segment == 0) close += width + 1;
        return close + 2 + sentinel_cost(s, k + 1);
      }
    case Head::score:
      if (s.segment_length == 0) {
        if (s.event_empty) return k >= 1 ? 2 : 3 + sentinel_cost(s, 1);
        return 2 + sentinel_cost(s, k + 1);
      } else {
        const std::size_t width = value_width(Head::score);
        const std::size_t close = (width - std::min(width, s.digits_emitted)) + 1;
        return close + 1 + sentinel_cost(s, k + 1);
      }
    case Head::text:
      if (s.segment_length == 0 && s.event_empty) return k >= 1 ? 1 : 2 + sentinel_cost(s, 1);
      return 1 + sentinel_cost(s, k + 1);
    case Head::none: break;
  }
  return 0;
}

inline std::vector<int> grammar_tokens(const DecodeState& s) {
  std::vector<int> out;
  auto digits = [&] {
    for (int d = 0; d <= 9; ++d) out.push_back(d);
  };
  if (s.active == Head::text) {
    const bool first_event_blank = s.event_index == 0 && s.event_empty && s.segment_length == 0;
    for (int b = 0; b < 256; ++b) out.push_back(b);
    if (!first_event_blank) out.push_back(text_vocab::kSync);
    if (s.event_empty && s.segment_length == 0 && s.event_index >= 1) out.push_back(text_vocab::kEos);
    return out;
  }
  const std::size_t width = value_width(s.active);
  const std::size_t pos = s.digits_emitted;
  const std::size_t dot_at = width - 2;
  if (pos == 0) {
    digits();
    if (s.values_in_segment == 0) out.push_back(digit_vocab::kSync);
  } else if (pos == dot_at) {
    out.push_back(digit_vocab::kDot);
  } else if (pos < width) {
    digits();
  } else {
    // Time segments carry exactly two values, score segments one.
    if (s.values_in_segment + 1 < max_values(s.active)) {
      out.push_back(digit_vocab::kSep);
    } else {
      out.push_back(digit_vocab::kSync);
    }
  }
  return out;
}

}  // namespace detail

inline constexpr std::size_t kUnlimitedBudget = std::numeric_limits<std::size_t>::max();

// Sorted token ids the active head may emit. Unconstrained: the whole head
// vocabulary. Constrained: the fixed-width grammar, further restricted to
// tokens after which the stream can still finish within `remaining_budget`.
inline std::vector<int> allowed_tokens(const DecodeState& s, bool constrained,
                                       std::size_t remaining_budget = kUnlimitedBudget) {
  if (s.finished) return {};
  std::vector<int> out;
  if (!constrained) {
    const int n = vocab_size(tag_for(s.active));
    out.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }
  out = detail::grammar_tokens(s);
  if (remaining_budget != kUnlimitedBudget) {
    std::vector<int> fits;
    const DecodeState probe = without_history(s);
    for (int t : out) {
      const DecodeState next = step(probe, t);
      if (1 + detail::min_tokens_to_finish(next) <= remaining_budget) fits.push_back(t);
    }
    if (!fits.empty()) out = std::move(fits);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Generation

// Next-token scorer driven by the decoder. begin() receives the prompt
// region; next_scores() returns one score per id of the head's vocabulary
// for the current prefix; accept() extends the prefix.
class NextTokenScorer {
 public:
  virtual ~NextTokenScorer() = default;
  virtual void begin(const SequenceLayout& prompt) = 0;
  virtual std::vector<double> next_scores(Head head) = 0;
  virtual void accept(TokenTag tag, int id) = 0;
};

struct SamplingPolicy {
  enum class Kind { greedy, top_k };
  Kind kind = Kind::greedy;
  std::size_t top_k = 5;
  double temperature = 1.0;
};

struct GenerateOptions {
  SamplingPolicy policy;
  bool constrained = false;
  std::size_t max_tokens = 512;
  std::size_t max_events = kDefaultMaxEvents;
  std::uint64_t seed = 0;
  std::ostream* trace = nullptr;  // JSONL {step, head, token, switched}
};

struct GenerateResult {
  Response response;
  TokenSeq raw;
  std::vector<Head> head_trace;
  std::vector<Diagnostic> diagnostics;
  bool finished = false;
  bool truncated = false;
};

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline int pick_token(const std::vector<double>& scores, const std::vector<int>& allowed, const SamplingPolicy& policy,
                      std::mt19937_64& rng) {
  if (allowed.empty()) throw ContractError("no admissible token");
  auto score_of = [&](int id) {
    const auto i = static_cast<std::size_t>(id);
    if (i >= scores.size()) throw ContractError("scorer returned too few scores");
    const double v = scores[i];
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  };
  std::vector<int> order = allowed;
  // Descending score, ties to the lower id.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score_of(a) > score_of(b); });
  if (policy.kind == SamplingPolicy::Kind::greedy) return order.front();
  const std::size_t k = std::max<std::size_t>(1, std::min(policy.top_k, order.size()));
  const double top = score_of(order.front());
  std::vector<double> w(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = std::exp((score_of(order[i]) - top) / std::max(policy.temperature, 1e-6));
    total += w[i];
  }
  double u = unit_uniform(rng) * total;
  for (std::size_t i = 0; i < k; ++i) {
    u -= w[i];
    if (u < 0) return order[i];
  }
  return order[k - 1];
}

}  // namespace detail

inline GenerateResult generate(NextTokenScorer& model, const SequenceLayout& prompt, const GenerateOptions& opt = {}) {
  GenerateResult out;
  DecodeState state = initial_state(opt.max_events);
  std::mt19937_64 rng(opt.seed);
  model.begin(prompt);
  std::size_t step_index = 0;
  while (!state.finished) {
    if (state.emitted.size() >= opt.max_tokens) {
      out.truncated = true;
      break;
    }
    const std::size_t remaining = opt.max_tokens - state.emitted.size();
    const auto allowed = allowed_tokens(state, opt.constrained, remaining);
    const Head head = state.active;
    const auto scores = model.next_scores(head);
    const int token = detail::pick_token(scores, allowed, opt.policy, rng);
    advance(state, token);
    out.head_trace.push_back(head);
    if (opt.trace) {
      nlohmann::json rec = {{"step", step_index},
                            {"head", std::string(to_string(head))},
                            {"token", token_symbol(tag_for(head), token)},
                            {"switched", state.active != head}};
      *opt.trace << rec.dump() << '\n';
    }
    ++step_index;
    if (!state.finished) model.accept(tag_for(head), token);
  }
  out.finished = state.finished;
  out.raw = state.emitted;
  auto parsed = parse_sequence(state.emitted, ParseMode::lenient);
  out.response = std::move(parsed.response);
  out.diagnostics = std::move(parsed.diagnostics);
  return out;
}

// True when `heads` is a prefix of (time, score, text)* given that the head
// switches exactly after each terminal.
inline bool is_head_cycle_prefix(const TokenSeq& emitted) {
  Head expected = Head::time;
  for (std::size_t i = 0; i < emitted.size(); ++i) {
    if (head_for(emitted.tags[i]) != expected) return false;
    if (is_segment_terminal(emitted.tags[i], emitted.ids[i])) expected = next_head(expected);
  }
  return true;
}

}  // namespace evseq
