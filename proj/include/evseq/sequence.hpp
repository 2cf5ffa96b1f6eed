#pragma once

// Interleaved training sequence: frame blocks, instruction, then per-event
// time / score / text segments, with head assignment and loss masks.

#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "evseq/errors.hpp"
#include "evseq/event.hpp"
#include "evseq/tokenizers.hpp"

namespace evseq {

inline constexpr std::size_t kDefaultSlotsPerFrame = 8;

enum class Head : std::uint8_t { none, time, score, text };

inline std::string_view to_string(Head h) {
  switch (h) {
    case Head::none: return "none";
    case Head::time: return "time";
    case Head::score: return "score";
    case Head::text: return "text";
  }
  return "none";
}

inline std::optional<Head> parse_head(std::string_view s) {
  for (Head h : {Head::none, Head::time, Head::score, Head::text}) {
    if (to_string(h) == s) return h;
  }
  return std::nullopt;
}

inline Head head_for(TokenTag t) {
  switch (t) {
    case TokenTag::time: return Head::time;
    case TokenTag::score: return Head::score;
    case TokenTag::text: return Head::text;
    case TokenTag::visual: return Head::none;
  }
  return Head::none;
}

inline TokenTag tag_for(Head h) {
  switch (h) {
    case Head::time: return TokenTag::time;
    case Head::score: return TokenTag::score;
    default: return TokenTag::text;
  }
}

// time -> score -> text -> time
inline Head next_head(Head h) {
  switch (h) {
    case Head::time: return Head::score;
    case Head::score: return Head::text;
    default: return Head::time;
  }
}

enum class Component : std::uint8_t { time, score, text, end };

// Half-open token range [begin, end) of one answer segment.
struct SegmentSpan {
  std::size_t event = 0;
  Component component = Component::time;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  friend bool operator==(const SegmentSpan&, const SegmentSpan&) = default;
};

struct SequenceLayout {
  TokenSeq tokens;
  // head_assign[p] names the head that predicts token p + 1.
  std::vector<Head> head_assign;
  std::vector<std::uint8_t> loss_mask;
  std::vector<SegmentSpan> spans;
  std::size_t frame_count = 0;
  std::size_t slots_per_frame = kDefaultSlotsPerFrame;
  std::size_t prompt_length = 0;

  std::size_t size() const { return tokens.size(); }
  std::size_t frame_block_size() const { return slots_per_frame + kTimestampWidth; }
  TokenSeq answer() const { return tokens.slice(prompt_length, tokens.size()); }
};

struct BuildOptions {
  std::size_t slots_per_frame = kDefaultSlotsPerFrame;
  std::size_t max_events = kDefaultMaxEvents;
  // Append an empty event (<sync> <sync> <eos>) after the last event so a
  // model can learn where generation stops.
  bool end_sentinel = false;
};

// Prompt region only: frame blocks, instruction text, instruction <sync>.
inline SequenceLayout build_prompt(const VideoSample& sample, const BuildOptions& opt = {}) {
  const std::size_t frames = sample.frame_times.size();
  if (frames == 0 && sample.instruction.empty()) {
    throw ContractError("degenerate prompt: no frames and empty instruction");
  }
  if (sample.features.frames != 0 && sample.features.frames != frames) {
    throw ContractError("frame feature count does not match frame_times");
  }
  if (opt.slots_per_frame == 0) throw ContractError("slots_per_frame must be positive");
  SequenceLayout layout;
  layout.frame_count = frames;
  layout.slots_per_frame = opt.slots_per_frame;
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t s = 0; s < opt.slots_per_frame; ++s) {
      layout.tokens.push_back(TokenTag::visual, static_cast<int>(f * opt.slots_per_frame + s));
    }
    layout.tokens.append(encode_frame_time(sample.frame_times[f]));
  }
  layout.tokens.append(text_tokenize(sample.instruction));
  layout.tokens.push_back(TokenTag::text, text_vocab::kSync);
  layout.prompt_length = layout.tokens.size();
  layout.head_assign.assign(layout.tokens.size(), Head::none);
  layout.loss_mask.assign(layout.tokens.size(), 0);
  return layout;
}

// The three segments of one event, placeholders as a lone <sync>.
inline TokenSeq encode_event(const Event& e) {
  TokenSeq seq;
  if (e.present.time) {
    const double times[2] = {e.start, e.end};
    seq.append(encode_time_list(times));
  } else {
    seq.push_back(TokenTag::time, digit_vocab::kSync);
  }
  if (e.present.score) {
    seq.append(encode_score_list(std::span<const double>(&e.score, 1)));
  } else {
    seq.push_back(TokenTag::score, digit_vocab::kSync);
  }
  if (e.present.text) seq.append(text_tokenize(e.caption));
  seq.push_back(TokenTag::text, text_vocab::kSync);
  return seq;
}

inline TokenSeq end_sentinel_tokens() {
  TokenSeq seq;
  seq.push_back(TokenTag::time, digit_vocab::kSync);
  seq.push_back(TokenTag::score, digit_vocab::kSync);
  seq.push_back(TokenTag::text, text_vocab::kEos);
  return seq;
}

inline bool is_segment_terminal(TokenTag tag, int id) {
  if (tag == TokenTag::text) return id == text_vocab::kSync || id == text_vocab::kEos;
  return id == digit_vocab::kSync;
}

namespace detail {

// Splits [begin, size) into segments that each end with a terminal. A
// trailing unterminated run is returned as a final span ending at size.
inline std::vector<SegmentSpan> segment_answer(const TokenSeq& tokens, std::size_t begin) {
  std::vector<SegmentSpan> spans;
  std::size_t seg_begin = begin;
  std::size_t index = 0;
  for (std::size_t p = begin; p < tokens.size(); ++p) {
    if (is_segment_terminal(tokens.tags[p], tokens.ids[p])) {
      const auto comp = static_cast<Component>(index % 3);
      spans.push_back({index / 3, comp, seg_begin, p + 1});
      ++index;
      seg_begin = p + 1;
    }
  }
  if (seg_begin < tokens.size()) {
    spans.push_back({index / 3, static_cast<Component>(index % 3), seg_begin, tokens.size()});
  }
  // A complete empty triple closing the stream is the end sentinel.
  if (spans.size() >= 6 && spans.size() % 3 == 0) {
    const std::size_t n = spans.size();
    if (spans[n - 3].length() == 1 && spans[n - 2].length() == 1 && spans[n - 1].length() == 1 &&
        spans[n - 1].end == tokens.size()) {
      const std::size_t event = spans[n - 3].event;
      spans.resize(n - 3);
      spans.push_back({event, Component::end, spans.back().end, tokens.size()});
    }
  }
  return spans;
}

inline void assign_heads(SequenceLayout& layout) {
  const std::size_t n = layout.tokens.size();
  layout.head_assign.assign(n, Head::none);
  layout.loss_mask.assign(n, 0);
  for (std::size_t p = layout.prompt_length; p < n; ++p) layout.loss_mask[p] = 1;
  for (std::size_t p = 0; p + 1 < n; ++p) {
    if (layout.loss_mask[p + 1]) layout.head_assign[p] = head_for(layout.tokens.tags[p + 1]);
  }
}

}  // namespace detail

inline SequenceLayout build_sequence(const VideoSample& sample, const Response& answer, const BuildOptions& opt = {}) {
  ValidateOptions vopt;
  vopt.max_events = opt.max_events;
  const auto findings = validate_response(answer, sample.duration, vopt);
  if (!findings.empty()) {
    std::string msg = "invalid answer:";
    for (const auto& f : findings) msg += " [" + f.message + "]";
    throw ContractError(msg);
  }
  SequenceLayout layout = build_prompt(sample, opt);
  for (std::size_t k = 0; k < answer.events.size(); ++k) {
    const std::size_t base = layout.tokens.size();
    const TokenSeq seg = encode_event(answer.events[k]);
    layout.tokens.append(seg);
    std::size_t begin = base;
    std::size_t comp = 0;
    for (std::size_t i = 0; i < seg.size(); ++i) {
      if (is_segment_terminal(seg.tags[i], seg.ids[i])) {
        layout.spans.push_back({k, static_cast<Component>(comp++), begin, base + i + 1});
        begin = base + i + 1;
      }
    }
  }
  if (opt.end_sentinel) {
    const std::size_t begin = layout.tokens.size();
    layout.tokens.append(end_sentinel_tokens());
    layout.spans.push_back({answer.events.size(), Component::end, begin, layout.tokens.size()});
  }
  detail::assign_heads(layout);
  return layout;
}

struct ParsedResponse {
  Response response;
  std::vector<Diagnostic> diagnostics;
  bool ended_with_sentinel = false;
  bool complete = true;  // false when the stream stops inside an event
};

// Parses an answer-region token stream (tags give head provenance). Strict
// mode throws ParseError on the first grammar violation; lenient mode keeps
// every complete event and records diagnostics for the rest.
inline ParsedResponse parse_sequence(const TokenSeq& answer, ParseMode mode = ParseMode::strict) {
  ParsedResponse out;
  auto fail = [&](std::size_t offset, const std::string& msg) {
    if (mode == ParseMode::strict) throw ParseError(msg, offset);
    out.diagnostics.push_back({offset, msg});
  };

  std::size_t p = 0;
  const std::size_t n = answer.size();
  while (p < n) {
    Event ev;
    TokenSeq segs[3];
    std::size_t seg_start[3] = {n, n, n};
    bool closed[3] = {false, false, false};
    bool eos = false;
    const std::size_t event_start = p;
    for (int c = 0; c < 3 && p <= n; ++c) {
      const TokenTag want = c == 0 ? TokenTag::time : (c == 1 ? TokenTag::score : TokenTag::text);
      seg_start[c] = p;
      while (p < n) {
        const TokenTag tag = answer.tags[p];
        const int id = answer.ids[p];
        if (tag != want) {
          fail(p, "expected " + std::string(to_string(want)) + " token, found " + std::string(to_string(tag)));
          ++p;
          continue;
        }
        segs[c].push_back(tag, id);
        ++p;
        if (is_segment_terminal(tag, id)) {
          closed[c] = true;
          eos = tag == TokenTag::text && id == text_vocab::kEos;
          break;
        }
      }
      if (!closed[c]) break;
    }
    if (!closed[0] || !closed[1] || !closed[2]) {
      out.complete = false;
      fail(n, "stream ends inside event " + std::to_string(out.response.events.size()) + " (started at " +
                  std::to_string(event_start) + ")");
      break;
    }

    const bool empty_triple = segs[0].size() == 1 && segs[1].size() == 1 && segs[2].size() == 1;
    if (empty_triple && (eos || !out.response.events.empty())) {
      out.ended_with_sentinel = true;
      if (p < n) fail(p, "tokens after end sentinel");
      break;
    }

    // Time segment: exactly two values, or a placeholder.
    const auto times = decode_time_list_ex(segs[0], mode);
    for (const auto& d : times.diagnostics) out.diagnostics.push_back({seg_start[0] + d.offset, d.message});
    if (times.values.empty()) {
      ev.present.time = false;
    } else {
      ev.present.time = true;
      if (times.values.size() != 2) {
        fail(seg_start[0], "time segment carries " + std::to_string(times.values.size()) + " values, expected 2");
      }
      ev.start = times.values.front();
      ev.end = times.values.back();
    }

    const auto scores = decode_score_list_ex(segs[1], mode);
    for (const auto& d : scores.diagnostics) out.diagnostics.push_back({seg_start[1] + d.offset, d.message});
    if (scores.values.empty()) {
      ev.present.score = false;
    } else {
      ev.present.score = true;
      if (scores.values.size() != 1) {
        fail(seg_start[1], "score segment carries " + std::to_string(scores.values.size()) + " values, expected 1");
      }
      ev.score = scores.values.front();
    }

    std::vector<int> bytes(segs[2].ids.begin(), segs[2].ids.end() - 1);
    std::vector<int> clean;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (bytes[i] < 0 || bytes[i] > 255) {
        fail(seg_start[2] + i, "non-byte token inside caption");
      } else {
        clean.push_back(bytes[i]);
      }
    }
    ev.caption = text_detokenize(clean);
    ev.present.text = !ev.caption.empty();
    out.response.events.push_back(std::move(ev));
    if (eos) {
      fail(p - 1, "<eos> terminates a non-empty event");
      if (p < n) fail(p, "tokens after <eos>");
      break;
    }
  }
  return out;
}

struct EventSpans {
  SegmentSpan time;
  SegmentSpan score;
  SegmentSpan text;
};

// Per-event (time, score, text) spans in event order. The end sentinel, when
// present, is not an event and is reported by end_sentinel_span.
inline std::vector<EventSpans> factorized_logprob_spans(const SequenceLayout& layout) {
  std::vector<EventSpans> out;
  for (const auto& s : layout.spans) {
    if (s.component == Component::end) continue;
    if (s.event >= out.size()) out.resize(s.event + 1);
    switch (s.component) {
      case Component::time: out[s.event].time = s; break;
      case Component::score: out[s.event].score = s; break;
      case Component::text: out[s.event].text = s; break;
      case Component::end: break;
    }
  }
  return out;
}

inline std::optional<SegmentSpan> end_sentinel_span(const SequenceLayout& layout) {
  if (!layout.spans.empty() && layout.spans.back().component == Component::end) return layout.spans.back();
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Debug dump: header lines "# key value", then one line per position:
//   offset  tag  symbol  head_assign  loss_mask

using DumpHeader = std::map<std::string, std::string>;

inline std::string dump_layout(const SequenceLayout& layout, const DumpHeader& extra = {}) {
  std::ostringstream os;
  os << "# frames " << layout.frame_count << '\n';
  os << "# slots " << layout.slots_per_frame << '\n';
  os << "# prompt_length " << layout.prompt_length << '\n';
  for (const auto& [k, v] : extra) os << "# " << k << ' ' << v << '\n';
  for (std::size_t p = 0; p < layout.size(); ++p) {
    const TokenTag tag = layout.tokens.tags[p];
    os << p << "  " << to_string(tag) << "  " << token_symbol(tag, layout.tokens.ids[p]) << "  "
       << to_string(layout.head_assign[p]) << "  " << static_cast<int>(layout.loss_mask[p]) << '\n';
  }
  return os.str();
}

struct ParsedDump {
  SequenceLayout layout;
  DumpHeader header;
};

inline ParsedDump parse_dump(std::istream& is) {
  ParsedDump out;
  std::string line;
  std::size_t line_no = 0;
  std::vector<Head> heads;
  std::vector<std::uint8_t> mask;
  auto header_size = [&](const char* key) -> std::size_t {
    auto it = out.header.find(key);
    if (it == out.header.end()) throw ParseError(std::string("dump header missing '") + key + "'", line_no);
    try {
      return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
      throw ParseError(std::string("dump header '") + key + "' is not a number", line_no);
    }
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      hs >> key;
      std::string value;
      std::getline(hs >> std::ws, value);
      out.header[key] = value;
      continue;
    }
    std::istringstream ls(line);
    std::size_t offset = 0;
    std::string tag_s, sym, head_s;
    int m = -1;
    if (!(ls >> offset >> tag_s >> sym >> head_s >> m)) throw ParseError("malformed dump line", line_no);
    std::string rest;
    if (ls >> rest) throw ParseError("trailing fields on dump line", line_no);
    if (offset != out.layout.tokens.size()) throw ParseError("non-consecutive offset", line_no);
    const auto tag = parse_token_tag(tag_s);
    if (!tag) throw ParseError("unknown tag '" + tag_s + "'", line_no);
    const auto id = parse_token_symbol(*tag, sym);
    if (!id) throw ParseError("unknown symbol '" + sym + "' for tag " + tag_s, line_no);
    const auto head = parse_head(head_s);
    if (!head) throw ParseError("unknown head '" + head_s + "'", line_no);
    if (m != 0 && m != 1) throw ParseError("loss_mask must be 0 or 1", line_no);
    out.layout.tokens.push_back(*tag, *id);
    heads.push_back(*head);
    mask.push_back(static_cast<std::uint8_t>(m));
  }
  out.layout.frame_count = header_size("frames");
  out.layout.slots_per_frame = header_size("slots");
  out.layout.prompt_length = header_size("prompt_length");
  if (out.layout.prompt_length > out.layout.tokens.size()) {
    throw ParseError("prompt_length exceeds token count", line_no);
  }
  detail::assign_heads(out.layout);
  for (std::size_t p = 0; p < heads.size(); ++p) {
    // The final head names a token outside a truncated dump, so it is taken as written.
    if (p + 1 == heads.size()) out.layout.head_assign[p] = heads[p];
    if (heads[p] != out.layout.head_assign[p] || mask[p] != out.layout.loss_mask[p]) {
      throw ParseError("head_assign/loss_mask inconsistent with token layout at offset " + std::to_string(p), p);
    }
  }
  out.layout.spans = detail::segment_answer(out.layout.tokens, out.layout.prompt_length);
  return out;
}

// Recovers the instruction text from a prompt region.
inline std::string prompt_instruction(const SequenceLayout& layout) {
  const std::size_t begin = layout.frame_count * layout.frame_block_size();
  std::vector<int> ids;
  for (std::size_t p = begin; p + 1 < layout.prompt_length; ++p) ids.push_back(layout.tokens.ids[p]);
  return text_detokenize(ids);
}

}  // namespace evseq
