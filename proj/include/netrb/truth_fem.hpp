#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "netrb/expression.hpp"
#include "netrb/network.hpp"

namespace netrb {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Pipe constants per edge (indexed like NetworkGraph::edges()). The
/// damping actually used is mu * d_base.
struct EdgeCoefficients {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
  Eigen::VectorXd d_base;
};

/// Mixed P0 (pressure) / P1 (flux) discretization on a uniformly
/// partitioned network.
///
/// Flux unknowns are nodal values of the broken P1 space restricted to the
/// Kirchhoff flux balance: at every junction one endpoint value is
/// eliminated in favour of the others, so every basis function satisfies
/// the balance exactly. `flux_expansion()` maps constrained coefficients to
/// broken nodal values.
class TruthModel {
 public:
  const NetworkGraph& graph() const { return *graph_; }
  std::shared_ptr<const NetworkGraph> graph_ptr() const { return graph_; }
  const EdgeCoefficients& coefficients() const { return coefficients_; }
  int cells_per_edge() const { return cells_per_edge_; }

  Eigen::Index n_p() const { return n_p_; }
  Eigen::Index n_u() const { return n_u_; }
  Eigen::Index size() const { return n_p_ + n_u_; }

  /// <a p, q> on Q (diagonal).
  const SparseMatrix& mass_a() const { return mass_a_; }
  /// <b u, v> on V.
  const SparseMatrix& mass_b() const { return mass_b_; }
  /// Unweighted L2 Gram matrices.
  const SparseMatrix& mass_q() const { return mass_q_; }
  const SparseMatrix& mass_v() const { return mass_v_; }
  /// <d_base u, v> on V; multiplied by mu online.
  const SparseMatrix& damping() const { return damping_; }
  /// G(i, j) = <d/dx phi_j, psi_i>, n_p x n_u.
  const SparseMatrix& divergence() const { return divergence_; }
  /// n_u x (#boundary nodes): flux-equation load per unit boundary pressure,
  /// columns ordered like NetworkGraph::boundary_nodes().
  const SparseMatrix& boundary_load() const { return boundary_load_; }
  const SparseMatrix& flux_expansion() const { return flux_expansion_; }

  double cell_width(std::size_t edge) const {
    return graph_->edges()[edge].length / cells_per_edge_;
  }
  Eigen::Index cell_index(std::size_t edge, int cell) const {
    return static_cast<Eigen::Index>(edge) * cells_per_edge_ + cell;
  }
  Eigen::Index broken_index(std::size_t edge, int node) const {
    return static_cast<Eigen::Index>(edge) * (cells_per_edge_ + 1) + node;
  }
  Eigen::Index n_broken() const {
    return static_cast<Eigen::Index>(graph_->edge_count()) * (cells_per_edge_ + 1);
  }

  /// Q coefficients of the broken derivative of a flux: M_Q^{-1} G u.
  Eigen::VectorXd derivative(const Eigen::VectorXd& u) const;
  Eigen::MatrixXd derivative(const Eigen::MatrixXd& u) const;

  /// Kernel basis vectors expanded to constrained flux coefficients
  /// (n_u x dim K).
  Eigen::MatrixXd kernel_flux(const KernelBasis& kernel) const;

  /// Sparse Cholesky of M_V, cached at assembly.
  Eigen::MatrixXd solve_mass_v(const Eigen::MatrixXd& rhs) const;

 private:
  friend TruthModel assemble_truth(std::shared_ptr<const NetworkGraph>, const EdgeCoefficients&,
                                   int);

  std::shared_ptr<const NetworkGraph> graph_;
  EdgeCoefficients coefficients_;
  int cells_per_edge_ = 0;
  Eigen::Index n_p_ = 0, n_u_ = 0;
  SparseMatrix mass_a_, mass_b_, mass_q_, mass_v_, damping_, divergence_, boundary_load_;
  SparseMatrix flux_expansion_;
  std::vector<Eigen::Index> free_index_;  // broken -> constrained, -1 if eliminated
  std::shared_ptr<const Eigen::SimplicialLDLT<SparseMatrix>> mass_v_factor_;
};

/// Throws ConfigError for cells_per_edge < 1, coefficient vectors of the
/// wrong length, nonpositive a or b, or negative d_base.
TruthModel assemble_truth(std::shared_ptr<const NetworkGraph> graph,
                          const EdgeCoefficients& coeffs, int cells_per_edge);

/// A pressure or flux coefficient pair; also used for errors and residuals.
struct StateVector {
  Eigen::VectorXd p;
  Eigen::VectorXd u;

  Eigen::VectorXd stacked() const;
  static StateVector split(const Eigen::VectorXd& x, Eigen::Index n_p);
};

// ---------------------------------------------------------------------------
// Sources and boundary data

/// Piecewise linear interpolation of (t, value) samples, constant beyond
/// the first and last sample.
class TimeSeries {
 public:
  TimeSeries(std::vector<double> times, std::vector<double> values);
  double operator()(double t) const;

 private:
  std::vector<double> times_, values_;
};

/// Scalar function of time: an expression in t or a tabulated series.
class TimeFunction {
 public:
  TimeFunction() = default;
  TimeFunction(Expression e);
  TimeFunction(TimeSeries s) : impl_(std::move(s)) {}
  static TimeFunction constant(double value) { return TimeFunction(Expression::constant(value)); }

  double operator()(double t) const;

 private:
  std::variant<Expression, TimeSeries> impl_;
};

/// Separable source contribution amplitude(t) * profile(x) on the listed
/// edges (all edges when the list is empty). x is the edge-local coordinate.
struct SourceTerm {
  TimeFunction amplitude;
  Expression profile;
  std::vector<std::string> edges;
};

struct SourceAndBoundaryData {
  std::vector<SourceTerm> f;  // pressure equation
  std::vector<SourceTerm> g;  // flux equation
  /// Nodal pressure p^v(t) per boundary node id; absent nodes are homogeneous.
  std::map<std::string, TimeFunction> boundary_pressure;
};

/// Affine-in-time load representation: load(t) = vectors * amplitudes(t).
struct LoadTerms {
  Eigen::MatrixXd pressure_vectors;  // n_p x K_p
  Eigen::MatrixXd flux_vectors;      // n_u x K_u
  std::vector<TimeFunction> pressure_amplitudes;
  std::vector<TimeFunction> flux_amplitudes;

  Eigen::VectorXd pressure_amplitude(double t) const;
  Eigen::VectorXd flux_amplitude(double t) const;
  Eigen::VectorXd pressure_load(double t) const { return pressure_vectors * pressure_amplitude(t); }
  Eigen::VectorXd flux_load(double t) const { return flux_vectors * flux_amplitude(t); }
};

/// Load vectors for f, g and the weakly imposed boundary pressures:
/// +p^v at x = 0 of an outgoing boundary edge, -p^v at x = l of an incoming one.
LoadTerms assemble_loads(const TruthModel& m, const SourceAndBoundaryData& data);

/// Right-hand side of the semi-discrete system
///   M_a p' = F(t) - G u,   M_b u' = G^T p - mu D u + G_bc(t).
StateVector apply_operator(const TruthModel& m, double mu, const StateVector& state, double t,
                           const LoadTerms& loads);
StateVector apply_operator(const TruthModel& m, double mu, const StateVector& state, double t,
                           const SourceAndBoundaryData& data);

enum class TargetSpace { Q, V };

/// Function of (edge index, local coordinate x).
using EdgeFunction = std::function<double(std::size_t, double)>;

/// L2-orthogonal projection: cell averages for Q, M_V normal equations for V.
Eigen::VectorXd l2_projection(const TruthModel& m, TargetSpace space, const EdgeFunction& f);

}  // namespace netrb
