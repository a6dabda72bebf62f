#pragma once

#include <Eigen/Cholesky>
#include <vector>

#include "ipo/panel.hpp"
#include "ipo/solver.hpp"

namespace ipo::internal {

// Per-observation covariance solve operators with consecutive-duplicate
// deduplication. Simulated panels share a single v_hat across observations,
// so one factorization serves the whole panel; EWMA panels fall back to one
// factorization per day.
class VhatSolves {
 public:
  explicit VhatSolves(const ObservationPanel& panel) {
    const Index m = panel.size();
    ids_.resize(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) {
      if (i > 0 && panel[i].v_hat == panel[i - 1].v_hat) {
        ids_[static_cast<std::size_t>(i)] = ids_[static_cast<std::size_t>(i - 1)];
        continue;
      }
      Eigen::LLT<Matrix> llt(panel[i].v_hat);
      if (llt.info() != Eigen::Success)
        throw SolverError("estimators: v_hat factorization failed at record " +
                          std::to_string(i));
      ids_[static_cast<std::size_t>(i)] = static_cast<Index>(llts_.size());
      llts_.push_back(std::move(llt));
    }
  }

  bool single() const { return llts_.size() == 1; }

  // V_hat_i^{-1} rhs
  Matrix solve(Index i, const Matrix& rhs) const {
    return llts_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(i)])].solve(rhs);
  }
  Vector solve(Index i, const Vector& rhs) const {
    return llts_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(i)])].solve(rhs);
  }

 private:
  std::vector<Eigen::LLT<Matrix>> llts_;
  std::vector<Index> ids_;
};

// Reduced-space analogue: applies W_i = F (F' V_hat_i F)^{-1} F' with the
// same deduplication.
class ReducedSolves {
 public:
  ReducedSolves(const ObservationPanel& panel, const Matrix& F) : F_(F) {
    const Index m = panel.size();
    ids_.resize(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) {
      if (i > 0 && panel[i].v_hat == panel[i - 1].v_hat) {
        ids_[static_cast<std::size_t>(i)] = ids_[static_cast<std::size_t>(i - 1)];
        continue;
      }
      const Matrix reduced = F.transpose() * panel[i].v_hat * F;
      Eigen::LLT<Matrix> llt(0.5 * (reduced + reduced.transpose()));
      if (llt.info() != Eigen::Success)
        throw SolverError("estimators: F'VF factorization failed at record " +
                          std::to_string(i));
      ids_[static_cast<std::size_t>(i)] = static_cast<Index>(llts_.size());
      llts_.push_back(std::move(llt));
    }
  }

  bool single() const { return llts_.size() == 1; }
  const Matrix& F() const { return F_; }

  // F (F' V_hat_i F)^{-1} F' rhs
  Matrix apply(Index i, const Matrix& rhs) const {
    const auto& llt = llts_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(i)])];
    return F_ * llt.solve(Matrix(F_.transpose() * rhs));
  }
  Vector apply(Index i, const Vector& rhs) const {
    const auto& llt = llts_[static_cast<std::size_t>(ids_[static_cast<std::size_t>(i)])];
    return F_ * llt.solve(Vector(F_.transpose() * rhs));
  }

 private:
  Matrix F_;
  std::vector<Eigen::LLT<Matrix>> llts_;
  std::vector<Index> ids_;
};

}  // namespace ipo::internal
