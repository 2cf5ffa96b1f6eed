#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evseq {

// Precondition violated by the caller (wrong vocabulary, shape mismatch,
// step after finish, ...). Indicates a programming error.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A value falls outside what a fixed-width format can represent.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Malformed token stream, dump, or JSONL line. `offset` is the token offset
// or line number, depending on the source.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace evseq
