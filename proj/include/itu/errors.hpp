#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace itu {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite input or a parameter outside its admissible range.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller-side precondition does not hold (e.g. gauge pinning on an
/// unbalanced market).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFamilyError : public Error {
 public:
  using Error::Error;
};

/// The pair equation Psi(T log m + u, T log m + v) = 0 has no root with
/// m in [exp(-350), exp(350)].
class UnboundedTransferError : public Error {
 public:
  using Error::Error;
};

/// A margin equation could not be bracketed; names the offending side and
/// type index.
class DivergedMarketError : public Error {
 public:
  DivergedMarketError(const std::string& what, char side, long index)
      : Error(what), side_(side), index_(index) {}
  char side() const noexcept { return side_; }
  long index() const noexcept { return index_; }

 private:
  char side_;
  long index_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, long iterations,
                      double final_residual, std::vector<double> history)
      : Error(what),
        iterations_(iterations),
        final_residual_(final_residual),
        history_(std::move(history)) {}

  long iterations() const noexcept { return iterations_; }
  double final_residual() const noexcept { return final_residual_; }
  const std::vector<double>& sup_change_history() const noexcept { return history_; }

 private:
  long iterations_;
  double final_residual_;
  std::vector<double> history_;
};

/// Finite-difference Jacobian is degenerate for the chosen step.
class StepSizeError : public Error {
 public:
  using Error::Error;
};

/// Market file could not be parsed or violates an invariant. Line and
/// column are 1-based; zero when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0, int column = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ", column " +
                             std::to_string(column) + ": " + what
                       : what),
        line_(line),
        column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace itu
