#pragma once

// Time and score digit tokenizers (13-symbol vocabularies), the byte-level
// text tokenizer, and the tagged TokenSeq carrier.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evseq/errors.hpp"
#include "evseq/event.hpp"

namespace evseq {

enum class TokenTag : std::uint8_t { visual, time, score, text };

inline std::string_view to_string(TokenTag t) {
  switch (t) {
    case TokenTag::visual: return "visual";
    case TokenTag::time: return "time";
    case TokenTag::score: return "score";
    case TokenTag::text: return "text";
  }
  return "text";
}

inline std::optional<TokenTag> parse_token_tag(std::string_view s) {
  for (TokenTag t : {TokenTag::visual, TokenTag::time, TokenTag::score, TokenTag::text}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

// Shared layout of the time and score vocabularies: ids 0-9 are digits.
namespace digit_vocab {
inline constexpr int kDot = 10;
inline constexpr int kSep = 11;
inline constexpr int kSync = 12;
inline constexpr int kSize = 13;
}  // namespace digit_vocab

// Byte-level toy text vocabulary: ids 0-255 are raw bytes.
namespace text_vocab {
inline constexpr int kSync = 256;
inline constexpr int kEos = 257;
inline constexpr int kSize = 258;
}  // namespace text_vocab

inline constexpr std::size_t kTimestampWidth = 6;
inline constexpr std::size_t kScoreWidth = 3;

inline int vocab_size(TokenTag t) {
  switch (t) {
    case TokenTag::time:
    case TokenTag::score: return digit_vocab::kSize;
    case TokenTag::text: return text_vocab::kSize;
    case TokenTag::visual: return 0;
  }
  return 0;
}

inline int sync_id(TokenTag t) { return t == TokenTag::text ? text_vocab::kSync : digit_vocab::kSync; }

inline std::string digit_symbol(int id) {
  if (id >= 0 && id <= 9) return "<" + std::to_string(id) + ">";
  switch (id) {
    case digit_vocab::kDot: return "<.>";
    case digit_vocab::kSep: return "<sep>";
    case digit_vocab::kSync: return "<sync>";
    default: throw ContractError("digit token id out of range: " + std::to_string(id));
  }
}

inline std::optional<int> parse_digit_symbol(std::string_view s) {
  for (int id = 0; id < digit_vocab::kSize; ++id) {
    if (digit_symbol(id) == s) return id;
  }
  return std::nullopt;
}

// Printable non-space ASCII renders as itself; everything else as \xHH.
inline std::string text_symbol(int id) {
  if (id == text_vocab::kSync) return "<sync>";
  if (id == text_vocab::kEos) return "<eos>";
  if (id < 0 || id > 255) throw ContractError("text token id out of range: " + std::to_string(id));
  if (id > 0x20 && id < 0x7f && id != '\\' && id != '<') return std::string(1, static_cast<char>(id));
  static constexpr char kHex[] = "0123456789abcdef";
  return std::string{'\\', 'x', kHex[id >> 4], kHex[id & 15]};
}

inline std::optional<int> parse_text_symbol(std::string_view s) {
  if (s == "<sync>") return text_vocab::kSync;
  if (s == "<eos>") return text_vocab::kEos;
  if (s.size() == 1) {
    const auto c = static_cast<unsigned char>(s[0]);
    if (c > 0x20 && c < 0x7f && c != '\\' && c != '<') return c;
    return std::nullopt;
  }
  if (s.size() == 4 && s[0] == '\\' && s[1] == 'x') {
    auto hex = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      return -1;
    };
    const int hi = hex(s[2]);
    const int lo = hex(s[3]);
    if (hi < 0 || lo < 0) return std::nullopt;
    const int id = hi * 16 + lo;
    // Reject escapes of characters that have a literal form.
    if (text_symbol(id) != s) return std::nullopt;
    return id;
  }
  return std::nullopt;
}

// Visual tokens carry the global slot index (frame * slots + slot).
inline std::string visual_symbol(int slot_index) { return "v" + std::to_string(slot_index); }

inline std::string token_symbol(TokenTag tag, int id) {
  switch (tag) {
    case TokenTag::visual: return visual_symbol(id);
    case TokenTag::time:
    case TokenTag::score: return digit_symbol(id);
    case TokenTag::text: return text_symbol(id);
  }
  return {};
}

inline std::optional<int> parse_token_symbol(TokenTag tag, std::string_view s) {
  switch (tag) {
    case TokenTag::visual: {
      if (s.size() < 2 || s[0] != 'v') return std::nullopt;
      int v = 0;
      for (char c : s.substr(1)) {
        if (c < '0' || c > '9') return std::nullopt;
        v = v * 10 + (c - '0');
      }
      return v;
    }
    case TokenTag::time:
    case TokenTag::score: return parse_digit_symbol(s);
    case TokenTag::text: return parse_text_symbol(s);
  }
  return std::nullopt;
}

struct TaskVocab {
  TokenTag kind = TokenTag::time;
  std::vector<std::string> tokens;
  int sync = digit_vocab::kSync;
  std::optional<int> sep;

  std::size_t size() const { return tokens.size(); }

  std::optional<int> id_of(std::string_view symbol) const {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] == symbol) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  // One symbol per line; id = line number.
  void dump(std::ostream& os) const {
    for (const auto& t : tokens) os << t << '\n';
  }

  static TaskVocab load(std::istream& is, TokenTag kind) {
    TaskVocab v;
    v.kind = kind;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      v.tokens.push_back(line);
    }
    auto s = v.id_of("<sync>");
    if (!s) throw ParseError("vocabulary has no <sync> symbol", v.tokens.size());
    v.sync = *s;
    if (kind != TokenTag::text) {
      auto sep = v.id_of("<sep>");
      if (!sep) throw ParseError("digit vocabulary has no <sep> symbol", v.tokens.size());
      v.sep = *sep;
    }
    return v;
  }
};

inline TaskVocab make_digit_vocab(TokenTag kind) {
  TaskVocab v;
  v.kind = kind;
  for (int id = 0; id < digit_vocab::kSize; ++id) v.tokens.push_back(digit_symbol(id));
  v.sync = digit_vocab::kSync;
  v.sep = digit_vocab::kSep;
  return v;
}

inline TaskVocab make_time_vocab() { return make_digit_vocab(TokenTag::time); }
inline TaskVocab make_score_vocab() { return make_digit_vocab(TokenTag::score); }

inline TaskVocab make_text_vocab() {
  TaskVocab v;
  v.kind = TokenTag::text;
  for (int id = 0; id < text_vocab::kSize; ++id) v.tokens.push_back(text_symbol(id));
  v.sync = text_vocab::kSync;
  return v;
}

struct TokenSeq {
  std::vector<int> ids;
  std::vector<TokenTag> tags;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }

  void push_back(TokenTag tag, int id) {
    tags.push_back(tag);
    ids.push_back(id);
  }

  void append(const TokenSeq& other) {
    ids.insert(ids.end(), other.ids.begin(), other.ids.end());
    tags.insert(tags.end(), other.tags.begin(), other.tags.end());
  }

  TokenSeq slice(std::size_t begin, std::size_t end) const {
    TokenSeq out;
    out.ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end));
    out.tags.assign(tags.begin() + static_cast<std::ptrdiff_t>(begin), tags.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
  }

  // Concatenated display form, e.g. "<0><0><1><0><.><2><sync>".
  std::string render() const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) out += token_symbol(tags[i], ids[i]);
    return out;
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

// ---------------------------------------------------------------------------
// Fixed-width number formatting

namespace detail {

inline std::string format_fixed(double x, int int_digits, double max_value, const char* what) {
  const bool in_range = x >= 0.0 && std::isfinite(x) && tenths_half_up(x) <= tenths_half_up(max_value);
  if (!in_range) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %g outside representable range [0, %.1f]", what, x, max_value);
    throw RangeError(buf);
  }
  const long long tenths = tenths_half_up(x);
  std::string out(static_cast<std::size_t>(int_digits) + 2, '0');
  out[static_cast<std::size_t>(int_digits)] = '.';
  out.back() = static_cast<char>('0' + tenths % 10);
  long long whole = tenths / 10;
  for (int i = int_digits - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = static_cast<char>('0' + whole % 10);
    whole /= 10;
  }
  return out;
}

inline void push_digits(TokenSeq& seq, TokenTag tag, std::string_view digits) {
  for (char c : digits) seq.push_back(tag, c == '.' ? digit_vocab::kDot : c - '0');
}

}  // namespace detail

// "DDDD.D", half-up to one decimal.
inline std::string format_timestamp(double x) { return detail::format_fixed(x, 4, kMaxTimestamp, "timestamp"); }

// "D.D", half-up to one decimal.
inline std::string format_score(double s) { return detail::format_fixed(s, 1, kMaxScore, "score"); }

namespace detail {

inline TokenSeq encode_list(std::span<const double> xs, bool terminal, TokenTag tag,
                            std::string (*fmt)(double)) {
  TokenSeq seq;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) seq.push_back(tag, digit_vocab::kSep);
    push_digits(seq, tag, fmt(xs[i]));
  }
  if (terminal) seq.push_back(tag, digit_vocab::kSync);
  return seq;
}

}  // namespace detail

inline TokenSeq encode_time_list(std::span<const double> xs, bool terminal = true) {
  return detail::encode_list(xs, terminal, TokenTag::time, &format_timestamp);
}

inline TokenSeq encode_score_list(std::span<const double> xs, bool terminal = true) {
  return detail::encode_list(xs, terminal, TokenTag::score, &format_score);
}

// The 6 digit/dot tokens of a frame timestamp, without <sep>/<sync>.
inline TokenSeq encode_frame_time(double x) { return encode_time_list(std::span<const double>(&x, 1), false); }

enum class ParseMode { strict, lenient };

struct Diagnostic {
  std::size_t offset;
  std::string message;
};

struct DecodedValues {
  std::vector<double> values;
  std::vector<Diagnostic> diagnostics;
};

namespace detail {

// Strict layout: value (<sep> value)* <sync>, or a lone <sync>. Each value
// is exactly int_digits digits, <.>, one digit.
inline DecodedValues decode_list(const TokenSeq& seq, TokenTag tag, std::size_t int_digits, ParseMode mode) {
  DecodedValues out;
  const std::size_t width = int_digits + 2;
  auto fail = [&](std::size_t offset, const std::string& msg) {
    if (mode == ParseMode::strict) throw ParseError(msg, offset);
    out.diagnostics.push_back({offset, msg});
  };

  std::string current;
  std::size_t value_begin = 0;
  bool terminated = false;
  auto flush = [&](std::size_t offset) {
    if (current.empty()) {
      fail(offset, "empty value");
      return;
    }
    bool well_formed = current.size() == width && current[int_digits] == '.';
    for (std::size_t i = 0; i < current.size() && well_formed; ++i) {
      if (i != int_digits && current[i] == '.') well_formed = false;
    }
    if (!well_formed) fail(value_begin, "malformed digit layout '" + current + "'");
    // Best effort for lenient mode: read digits before/after the first dot.
    double whole = 0.0;
    double frac = 0.0;
    double scale = 0.1;
    bool after_dot = false;
    bool any_digit = false;
    for (char c : current) {
      if (c == '.') {
        if (after_dot) break;
        after_dot = true;
        continue;
      }
      any_digit = true;
      if (!after_dot) {
        whole = whole * 10 + (c - '0');
      } else {
        frac += scale * (c - '0');
        scale *= 0.1;
      }
    }
    if (any_digit) out.values.push_back(round1(whole + frac));
    current.clear();
  };

  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.tags[i] != tag) {
      fail(i, "token tagged " + std::string(to_string(seq.tags[i])) + " in " + std::string(to_string(tag)) + " segment");
      continue;
    }
    if (terminated) {
      fail(i, "tokens after <sync>");
      break;
    }
    const int id = seq.ids[i];
    if (id >= 0 && id <= 9) {
      if (current.empty()) value_begin = i;
      current.push_back(static_cast<char>('0' + id));
    } else if (id == digit_vocab::kDot) {
      if (current.empty()) value_begin = i;
      current.push_back('.');
    } else if (id == digit_vocab::kSep) {
      flush(i);
    } else if (id == digit_vocab::kSync) {
      if (!current.empty() || !out.values.empty()) {
        flush(i);
      }
      terminated = true;
    } else {
      fail(i, "token id " + std::to_string(id) + " outside digit vocabulary");
    }
  }
  if (!terminated) {
    if (!current.empty()) flush(seq.size());
    fail(seq.size(), "missing <sync> terminal");
  }
  return out;
}

}  // namespace detail

inline DecodedValues decode_time_list_ex(const TokenSeq& seq, ParseMode mode) {
  return detail::decode_list(seq, TokenTag::time, 4, mode);
}

inline DecodedValues decode_score_list_ex(const TokenSeq& seq, ParseMode mode) {
  return detail::decode_list(seq, TokenTag::score, 1, mode);
}

// Strict inverse of encode_time_list.
inline std::vector<double> decode_time_list(const TokenSeq& seq) {
  return decode_time_list_ex(seq, ParseMode::strict).values;
}

inline std::vector<double> decode_score_list(const TokenSeq& seq) {
  return decode_score_list_ex(seq, ParseMode::strict).values;
}

// ---------------------------------------------------------------------------
// Text

// Interface a text tokenizer must satisfy to stand in for the byte-level one.
template <class T>
concept TextTokenizer = requires(const T& t, std::string_view s, std::span<const int> ids) {
  { t.tokenize(s) } -> std::convertible_to<std::vector<int>>;
  { t.detokenize(ids) } -> std::convertible_to<std::string>;
  { t.vocab_size() } -> std::convertible_to<int>;
  { t.sync_id() } -> std::convertible_to<int>;
  { t.eos_id() } -> std::convertible_to<int>;
};

struct ByteTokenizer {
  std::vector<int> tokenize(std::string_view s) const {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (char c : s) ids.push_back(static_cast<unsigned char>(c));
    return ids;
  }

  std::string detokenize(std::span<const int> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] > 255) {
        throw ParseError("text id " + std::to_string(ids[i]) + " is not a byte symbol", i);
      }
      out.push_back(static_cast<char>(ids[i]));
    }
    return out;
  }

  int vocab_size() const { return text_vocab::kSize; }
  int sync_id() const { return text_vocab::kSync; }
  int eos_id() const { return text_vocab::kEos; }
};

static_assert(TextTokenizer<ByteTokenizer>);

inline TokenSeq text_tokenize(std::string_view s) {
  TokenSeq seq;
  for (int id : ByteTokenizer{}.tokenize(s)) seq.push_back(TokenTag::text, id);
  return seq;
}

inline std::string text_detokenize(std::span<const int> ids) { return ByteTokenizer{}.detokenize(ids); }

}  // namespace evseq
