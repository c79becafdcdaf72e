#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hdcaps {

// Malformed or truncated container file.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// A non-finite value appeared during training; `tensor` names the culprit.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& tensor)
      : std::runtime_error("training diverged: non-finite values in " + tensor), tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

// Config file problem, with the 1-based line it was found on (0 if none).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace hdcaps
