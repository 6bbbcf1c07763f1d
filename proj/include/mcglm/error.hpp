#pragma once

#include <stdexcept>
#include <string>

namespace mcglm {

// Inconsistent model or configuration: dimension mismatches, rank-deficient
// designs, unknown columns, unsupported links.
class SpecificationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A parameter point where Sigma_r, Sigma_b or C is not positive definite.
// The fitter treats this as a step-halving signal.
class InfeasiblePoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data file problems. `row` is 1-based counting the header as row 1, or 0
// when the error is not tied to a row.
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& message, long row = 0)
      : std::runtime_error(row > 0 ? "row " + std::to_string(row) + ": " + message : message),
        row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

// Fitting did not converge or a sandwich matrix was singular.
class DiagnosticError : public std::runtime_error {
 public:
  DiagnosticError(const std::string& message, std::string trace = {})
      : std::runtime_error(message), trace_(std::move(trace)) {}
  const std::string& trace() const noexcept { return trace_; }

 private:
  std::string trace_;
};

}  // namespace mcglm
