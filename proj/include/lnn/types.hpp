#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error hierarchy. Every failure a caller can react to has its own type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct InputError : Error {
  using Error::Error;
};

struct DegenerateInputError : InputError {
  using InputError::InputError;
};

struct PreconditionError : Error {
  using Error::Error;
};

struct InfeasibleError : Error {
  using Error::Error;
};

struct ConvergenceError : Error {
  ConvergenceError(const std::string& what, double primal, double dual)
      : Error(what), primalResidual(primal), dualResidual(dual) {}
  double primalResidual;
  double dualResidual;
};

}  // namespace lnn
