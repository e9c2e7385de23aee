#pragma once
/// Error types shared by all modules.

#include <cstddef>
#include <stdexcept>
#include <string>

namespace twoscale {

enum class ErrorKind {
  ShapeMismatch,
  ResolutionTooCoarse,
  GridNotNested,
  DisconnectedFluid,
  NonConvergence,
  NegativeYield,
  InadmissibleProbe,
  MissingMultiplier,
  SingularK,
  NoBracket,
  InvalidGeometry,
  InvalidConfig,
  IOFailure,
  StrategyDisagreement,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ResolutionTooCoarse: return "ResolutionTooCoarse";
    case ErrorKind::GridNotNested: return "GridNotNested";
    case ErrorKind::DisconnectedFluid: return "DisconnectedFluid";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::NegativeYield: return "NegativeYield";
    case ErrorKind::InadmissibleProbe: return "InadmissibleProbe";
    case ErrorKind::MissingMultiplier: return "MissingMultiplier";
    case ErrorKind::SingularK: return "SingularK";
    case ErrorKind::NoBracket: return "NoBracket";
    case ErrorKind::InvalidGeometry: return "InvalidGeometry";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IOFailure: return "IOFailure";
    case ErrorKind::StrategyDisagreement: return "StrategyDisagreement";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, std::size_t iterations, double residual)
      : Error(ErrorKind::NonConvergence,
              what + " (iterations=" + std::to_string(iterations) +
                  ", residual=" + std::to_string(residual) + ")"),
        iterations_(iterations), residual_(residual) {}
  std::size_t iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

 private:
  std::size_t iterations_;
  double residual_;
};

/// Raised by bisection when no rigid/flowing transition is bracketed.
class NoBracket : public Error {
 public:
  NoBracket(const std::string& what, double lower_bound)
      : Error(ErrorKind::NoBracket, what), lower_bound_(lower_bound) {}
  double lower_bound() const noexcept { return lower_bound_; }

 private:
  double lower_bound_;
};

}  // namespace twoscale
