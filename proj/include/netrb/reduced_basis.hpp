#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netrb/time_integration.hpp"
#include "netrb/truth_fem.hpp"

namespace netrb {

/// Compatible pair (Q_N, V_N) stored as truth coefficient matrices.
///
/// Columns are ordered by enrichment: V starts with the kernel block, and
/// `blocks[i]` holds the (dim Q, dim V) sizes after i enrichments, so every
/// block prefix is itself a compatible pair.
struct ReducedBasis {
  Eigen::MatrixXd q_basis;  // n_p x m, M_Q-orthonormal
  Eigen::MatrixXd v_basis;  // n_u x (k + ...), M_V-orthonormal
  Eigen::Index kernel_dim = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> blocks;

  Eigen::Index dim_q() const { return q_basis.cols(); }
  Eigen::Index dim_v() const { return v_basis.cols(); }
  /// N = dim(Q_N) + dim(V_N).
  Eigen::Index dim() const { return dim_q() + dim_v(); }
  std::size_t enrichments() const { return blocks.empty() ? 0 : blocks.size() - 1; }

  /// Basis after the first `enrichments` enrichment steps.
  ReducedBasis prefix(std::size_t enrichments) const;
};

/// Galerkin projection of the truth operators and loads onto the basis.
ReducedSystem project(const TruthModel& m, const LoadTerms& loads, const ReducedBasis& rb);

/// Lift reduced coefficients [p_N; u_N] to truth coefficients.
Eigen::VectorXd lift(const ReducedBasis& rb, const Eigen::VectorXd& reduced);

struct CompatibilityReport {
  /// max over V_N columns of the relative M_Q-distance of d/dx v to Q_N.
  double derivative_residual = 0.0;
  /// rank of the Q_N-coordinates of d/dx V_N; A1 needs rank == dim Q_N.
  Eigen::Index derivative_rank = 0;
  /// max over kernel vectors of the relative M_V-distance to V_N (A2).
  double kernel_residual = 0.0;
  double q_orthonormality = 0.0;
  double v_orthonormality = 0.0;
  Eigen::Index dim_q = 0;

  bool a1(double tol = 1e-10) const { return derivative_residual <= tol && derivative_rank == dim_q; }
  bool a2(double tol = 1e-10) const { return kernel_residual <= tol; }
  bool orthonormal(double tol = 1e-12) const {
    return q_orthonormality <= tol && v_orthonormality <= tol;
  }
};

CompatibilityReport check_compatibility(const TruthModel& m, const Eigen::MatrixXd& kernel_flux,
                                        const ReducedBasis& rb);

}  // namespace netrb
