#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace ipo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Inconsistent panel data: dimension mismatch, asymmetric or indefinite
/// covariance, malformed design mask.
struct PanelError : Error {
  using Error::Error;
};

/// Too few observations for the requested statistic.
struct InsufficientSampleError : PanelError {
  using PanelError::PanelError;
};

/// Estimation failure (rank-deficient design, singular quadratic, ...).
struct EstimationError : Error {
  using Error::Error;
};

/// Optimization failure.
struct SolverError : Error {
  using Error::Error;
};
struct InfeasibleError : SolverError {
  using SolverError::SolverError;
};
struct ConvergenceError : SolverError {
  using SolverError::SolverError;
};

/// Backward-pass failure (singular KKT system after regularization).
struct DifferentiationError : Error {
  using Error::Error;
};

/// Invalid run configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed or missing input data files.
struct IngestError : Error {
  using Error::Error;
};

inline constexpr const char* kLibraryVersion = "0.1.0";

}  // namespace ipo
