#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace seaseg {

// Bad input or configuration: caller-side mistakes. The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shape contracts violated between tensors.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Malformed text input. Carries the zero-based index of the offending token.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t token)
      : ValidationError(what + " (token " + std::to_string(token) + ")"), token_(token) {}
  std::size_t token() const { return token_; }

 private:
  std::size_t token_;
};

// Non-finite values during training, I/O failures and similar. Exit code 3.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace seaseg
