#pragma once

#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "netrb/truth_fem.hpp"

namespace netrb {

/// Linear damped wave system in first-order form
///   M_a p' + G u = F(t),   M_b u' - G^T p + mu D u = L(t).
/// Matrix is SparseMatrix for the truth model and a dense matrix for
/// reduced models.
template <class Matrix>
struct WaveSystem {
  Matrix mass_a;
  Matrix mass_b;
  Matrix damping;
  Matrix divergence;  // n_p x n_u
  LoadTerms loads;

  Eigen::Index n_p() const { return mass_a.rows(); }
  Eigen::Index n_u() const { return mass_b.rows(); }
  Eigen::Index size() const { return n_p() + n_u(); }
};

using TruthSystem = WaveSystem<SparseMatrix>;
using ReducedSystem = WaveSystem<Eigen::MatrixXd>;

TruthSystem truth_system(const TruthModel& m, const LoadTerms& loads);

struct SolverSettings {
  double t_end = 20.0;
  double step = 0.02;
  int record_every = 1;

  /// Number of implicit Euler steps; throws ConfigError unless t_end is an
  /// integer multiple of step.
  long steps() const;
  double time(long n) const { return static_cast<double>(n) * step; }
};

/// Recorded states are stacked [p; u] coefficient vectors.
struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<double> energies;  // state energy at each recorded time
};

/// Implicit Euler: (M + tau K(mu)) x_{n+1} = M x_n + tau load(t_{n+1}), with a
/// single factorization of the step matrix per call. Throws NumericalError
/// if the factorization fails or the state stops being finite.
template <class Matrix>
Trajectory integrate(const WaveSystem<Matrix>& system, double mu, const Eigen::VectorXd& x0,
                     const SolverSettings& settings);

/// 0.5 (p^T M_a p + u^T M_b u).
template <class Matrix>
double energy(const WaveSystem<Matrix>& system, const Eigen::VectorXd& x);

/// Energy of the discrete time derivative (x_n - x_{n-1}) / (t_n - t_{n-1})
/// for n >= 1; entry n-1 belongs to times[n].
template <class Matrix>
std::vector<double> derivative_energies(const WaveSystem<Matrix>& system, const Trajectory& traj);

}  // namespace netrb
