#pragma once

#include <stdexcept>
#include <string>

namespace geomflow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed grid file or configuration text.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// An element measure vanished (or turned negative) at an evaluation point.
class DegeneracyError : public Error {
 public:
  DegeneracyError(int element, const std::string& what)
      : Error(what), element_(element) {}
  int element() const noexcept { return element_; }

 private:
  int element_;
};

/// The per-step linear system could not be factorized.
class WellPosednessError : public Error {
 public:
  using Error::Error;
};

/// Picard iteration hit its iteration cap.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Non-finite values appeared in a solution vector.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace geomflow
