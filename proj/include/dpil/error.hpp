#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dpil {

/// Input rejected by a precondition check (bad dimensions, out-of-range values).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value. `index()` names the offending
/// batch element, epoch, step or iteration, depending on the raising site.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::ptrdiff_t index)
      : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}

  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

/// Malformed file content. `record()` is the zero-based line or record index.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t record)
      : std::runtime_error(what + " (record " + std::to_string(record) + ")"), record_(record) {}

  std::size_t record() const noexcept { return record_; }

 private:
  std::size_t record_;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

}  // namespace detail
}  // namespace dpil
