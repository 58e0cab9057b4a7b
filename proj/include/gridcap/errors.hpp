#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridcap {

/// Malformed input text. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(format(source, line, what)), source_(source), line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& source, std::size_t line,
                            const std::string& what) {
    std::string out = source.empty() ? std::string("<input>") : source;
    if (line > 0) out += ":" + std::to_string(line);
    return out + ": " + what;
  }

  std::string source_;
  std::size_t line_;
};

/// Structurally parsed data that violates a model invariant.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gridcap
