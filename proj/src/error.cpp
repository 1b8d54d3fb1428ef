#include "marionette/error.hpp"

namespace marionette {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NotARotation: return "NotARotation";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::RateError: return "RateError";
    case ErrorKind::DeadEnd: return "DeadEnd";
    case ErrorKind::DurationError: return "DurationError";
    case ErrorKind::DivergenceError: return "DivergenceError";
    case ErrorKind::DeadRequest: return "DeadRequest";
    case ErrorKind::EmptyBank: return "EmptyBank";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::TooFew: return "TooFew";
    case ErrorKind::TooShort: return "TooShort";
    case ErrorKind::Empty: return "Empty";
    case ErrorKind::BoundaryMismatch: return "BoundaryMismatch";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::UndefinedDirection: return "UndefinedDirection";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace marionette
