#pragma once

#include <stdexcept>
#include <string>

namespace curveclust {

// Input problems: malformed files, out-of-domain values, empty subjects.
class DataError : public std::runtime_error {
 public:
  enum class Kind { MissingColumn, UnparseableValue, OutOfDomain, EmptySubject, Invalid };

  DataError(Kind kind, const std::string& what, long row = -1)
      : std::runtime_error(what), kind_(kind), row_(row) {}

  Kind kind() const noexcept { return kind_; }
  // 1-based data row (header excluded) when the error is tied to one, else -1.
  long row() const noexcept { return row_; }

 private:
  Kind kind_;
  long row_;
};

// Evaluation of a kernel or basis outside the normalized domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Linear-algebra and statistical failures inside fitting.
class NumericalError : public std::runtime_error {
 public:
  enum class Kind {
    SingularSystem,
    NonFiniteInput,
    DegenerateTrace,
    DegenerateCovariance,
    OptimFailure,
    EmptyCluster
  };

  NumericalError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace curveclust
