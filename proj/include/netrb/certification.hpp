#pragma once

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "netrb/reduced_basis.hpp"
#include "netrb/time_integration.hpp"
#include "netrb/truth_fem.hpp"

namespace netrb {

/// How the generalized eigenvalue lambda_max maps to C_P.
/// SquareRoot: C_P = sqrt(lambda_max), consistent with the Rayleigh quotient
/// of the Poincare inequality. Eigenvalue: C_P = lambda_max.
enum class PoincareConvention { SquareRoot, Eigenvalue };

/// PerParameter evaluates C0, C1, C_P at the given mu; WorstCase uses the
/// extremes over the admissible parameter range for every mu.
enum class ConstantsMode { PerParameter, WorstCase };

struct ConstantsSettings {
  PoincareConvention convention = PoincareConvention::SquareRoot;
  ConstantsMode mode = ConstantsMode::PerParameter;
  double mu_min = 0.01;
  double mu_max = 10.0;
};

struct BoundConstants {
  double C0 = 0.0;
  double C1 = 0.0;
  double C_P = 0.0;
  double gamma = 0.0;
  double Cprime = 0.0;
  double Cdprime = 0.0;
  double Ctilde = 0.0;
};

/// Elementwise min and max over {a^e, b^e, mu d_base^e}.
std::pair<double, double> coefficient_bounds(const EdgeCoefficients& c, double mu);

/// C' = C'' = 3 (C1/C0)^{1/2}, gamma = 2/3 (C0/C1) C0 / (2 C0 + 4 C_P C1),
/// Ctilde = max(C1, 1/C0) / C0.
BoundConstants bound_constants_from(double C0, double C1, double C_P);

/// Matrices of the pencil B u = lambda (A + D) u on V:
/// B = <b u, v>, A = <a^{-1} u', v'>, D = <mu d Pi_0 u, Pi_0 v>, with Pi_0 the
/// L2 projection onto the kernel space.
struct PoincarePencil {
  SparseMatrix b;
  SparseMatrix a;
  Eigen::MatrixXd d;
};

PoincarePencil poincare_pencil(const TruthModel& m, const Eigen::MatrixXd& kernel_flux, double mu);

struct PoincareEigen {
  double lambda_max = 0.0;
  Eigen::VectorXd eigenvector;  // flux coefficients
  int iterations = 0;
};

/// Largest eigenvalue of the pencil. Dense generalized solver below
/// dimension 200, otherwise block inverse iteration on (A + D)^{-1} B with a
/// Cholesky factor of A + D.
PoincareEigen poincare_eigen(const TruthModel& m, const Eigen::MatrixXd& kernel_flux, double mu);

double poincare_constant(const TruthModel& m, double mu,
                         PoincareConvention convention = PoincareConvention::SquareRoot);

/// Throws ConfigError for mu outside [mu_min, mu_max] and NumericalError
/// when the coefficients admit no positive C0.
BoundConstants stability_constants(const TruthModel& m, double mu, const ConstantsSettings& s);

/// Decay rate from a least-squares line fit of log E(t_n) over t_n >= s.
/// The window stops before E drops under 1e-14 E(s). Throws NumericalError
/// for fewer than 3 usable points or a nonnegative slope.
double gamma_from_simulation(const std::vector<double>& times, const std::vector<double>& energies,
                             double s);

/// Offline-online evaluation of the squared residual norms
/// ||r^p||^2 = rho_p^T M_Q^{-1} rho_p and ||r^u||^2 = rho_u^T M_V^{-1} rho_u.
///
/// The residual vectors are affine in (load amplitudes, reduced states,
/// reduced time derivatives, mu), so both norms are quadratic forms with
/// Gramians assembled once per basis.
class ResidualEstimator {
 public:
  ResidualEstimator(const TruthModel& m, const LoadTerms& loads, const ReducedBasis& rb);

  /// Squared norms for one reduced state and its time derivative at time t.
  std::pair<double, double> norms_sq(const Eigen::VectorXd& p, const Eigen::VectorXd& u,
                                     const Eigen::VectorXd& dp, const Eigen::VectorXd& du,
                                     double mu, double t) const;

  Eigen::Index dim_q() const { return dim_q_; }
  Eigen::Index dim_v() const { return dim_v_; }

 private:
  Eigen::Index dim_q_ = 0, dim_v_ = 0;
  LoadTerms amplitudes_;  // only the amplitude functions are used
  Eigen::MatrixXd gram_p_, gram_u_;
};

struct ResidualNorms {
  std::vector<double> rp_sq;
  std::vector<double> ru_sq;
};

/// Residuals of an implicit Euler reduced trajectory: at t_n the time
/// derivative is (x_n - x_{n-1}) / tau; entry 0 is zero.
ResidualNorms residual_norms(const ResidualEstimator& est, const Trajectory& reduced, double mu);

struct InitialError {
  double p_norm = 0.0;
  double u_norm = 0.0;
};

struct CertifiedTrajectory {
  std::vector<double> times;
  std::vector<double> delta;
  std::vector<double> delta_tilde;
  std::vector<double> err_sq;     // empty without a truth reference
  std::vector<double> eta;        // NaN where err_sq == 0
  std::vector<double> eta_tilde;
  std::vector<double> rp_norm_sq;
  std::vector<double> ru_norm_sq;
};

/// ||p - Q p_N||^2 + ||u - V u_N||^2 at every recorded time.
std::vector<double> error_sq_series(const TruthModel& m, const ReducedBasis& rb,
                                    const Trajectory& truth, const Trajectory& reduced);

/// Delta(t_n) = C' e^{-gamma t_n} |e(0)|^2 + C'' I_n with
/// I_n = e^{-gamma tau} I_{n-1} + tau (||r^p||^2 + ||r^u||^2)(t_n), and
/// DeltaTilde(t_n) = Ctilde (|e^p(0)| + |e^u(0)| + J_n)^2 with
/// J_n = J_{n-1} + tau (||r^p|| + ||r^u||)(t_n).
CertifiedTrajectory certify(const ResidualNorms& residuals, const BoundConstants& constants,
                            const std::vector<double>& times, const InitialError& e0,
                            const SolverSettings& settings,
                            const std::vector<double>* err_sq = nullptr);

}  // namespace netrb
