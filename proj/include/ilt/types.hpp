#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace ilt {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Point = Eigen::VectorXd;

// +inf is the sentinel for infinite entropies and singular kernels. It orders
// above every finite value, so min/max reductions handle it without special cases.
inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: admissibility p(d-2) < d, unbounded low-dimensional
// domains, unknown config keys.
class ConfigError : public Error {
public:
  using Error::Error;
};

class InputError : public Error {
public:
  using Error::Error;
};

class SingularDiagonalError : public Error {
public:
  using Error::Error;
};

class PartitionError : public Error {
public:
  using Error::Error;
};

class SizeError : public Error {
public:
  using Error::Error;
};

class UnsupportedError : public Error {
public:
  using Error::Error;
};

// Raised when an iterative solver exhausts its budget. Carries the best
// iterate so callers can still report a partial result.
class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, double best_value, int iterations,
                   Vec best_iterate = {})
      : Error(what), best_value_(best_value), iterations_(iterations),
        best_iterate_(std::move(best_iterate)) {}

  double best_value() const { return best_value_; }
  int iterations() const { return iterations_; }
  const Vec& best_iterate() const { return best_iterate_; }

private:
  double best_value_;
  int iterations_;
  Vec best_iterate_;
};

void log_warning(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace ilt
