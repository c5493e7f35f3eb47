#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flobloch {

// Failure categories raised by the library. Each maps onto one of the
// documented error conditions of an operation.
enum class ErrorKind {
  Domain,
  Validity,
  Shell,
  Resolution,
  Resonance,
  DegenerateLattice,
  Configuration,
  Numeric,
  Representability,
  Parameter,
  Stability,
  Coverage,
  Detection,
  Symmetry,
  Preparation,
  Kick,
  Design,
  Parse,
  Validation,
  Dimension,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Validity: return "validity";
    case ErrorKind::Shell: return "shell";
    case ErrorKind::Resolution: return "resolution";
    case ErrorKind::Resonance: return "resonance";
    case ErrorKind::DegenerateLattice: return "degenerate-lattice";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Representability: return "representability";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Stability: return "stability";
    case ErrorKind::Coverage: return "coverage";
    case ErrorKind::Detection: return "detection";
    case ErrorKind::Symmetry: return "symmetry";
    case ErrorKind::Preparation: return "preparation";
    case ErrorKind::Kick: return "kick";
    case ErrorKind::Design: return "design";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace flobloch
