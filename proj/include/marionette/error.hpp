#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace marionette {

// Every failure the library reports carries one of these kinds. The CLI and
// the HTTP service print the kind name verbatim, so keep names stable.
enum class ErrorKind {
  DegenerateInput,
  NotARotation,
  ShapeError,
  FormatError,
  SchemaError,
  RateError,
  DeadEnd,
  DurationError,
  DivergenceError,
  DeadRequest,
  EmptyBank,
  DimensionMismatch,
  TooFew,
  TooShort,
  Empty,
  BoundaryMismatch,
  Degenerate,
  UndefinedDirection,
  NotFound,
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace marionette
