#include "netrb/certification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "netrb/error.hpp"

namespace netrb {

std::pair<double, double> coefficient_bounds(const EdgeCoefficients& c, double mu) {
  const Eigen::VectorXd d = mu * c.d_base;
  const double lo = std::min({c.a.minCoeff(), c.b.minCoeff(), d.minCoeff()});
  const double hi = std::max({c.a.maxCoeff(), c.b.maxCoeff(), d.maxCoeff()});
  return {lo, hi};
}

BoundConstants bound_constants_from(double C0, double C1, double C_P) {
  BoundConstants k;
  k.C0 = C0;
  k.C1 = C1;
  k.C_P = C_P;
  k.Cprime = 3.0 * std::sqrt(C1 / C0);
  k.Cdprime = k.Cprime;
  k.gamma = (2.0 / 3.0) * (C0 / C1) * C0 / (2.0 * C0 + 4.0 * C_P * C1);
  k.Ctilde = std::max(C1, 1.0 / C0) / C0;
  return k;
}

PoincarePencil poincare_pencil(const TruthModel& m, const Eigen::MatrixXd& kernel_flux, double mu) {
  PoincarePencil pencil;
  pencil.b = m.mass_b();
  const Eigen::VectorXd inv_a = m.mass_a().diagonal().cwiseInverse();
  pencil.a = SparseMatrix(m.divergence().transpose() * inv_a.asDiagonal() * m.divergence());

  // D = W (K^T mu D_base K) W^T with W = M_V K (K^T M_V K)^{-1}.
  const Eigen::MatrixXd mk = m.mass_v() * kernel_flux;
  const Eigen::MatrixXd gram = kernel_flux.transpose() * mk;
  const Eigen::MatrixXd w = gram.llt().solve(mk.transpose()).transpose();
  const Eigen::MatrixXd dk = mu * (kernel_flux.transpose() * (m.damping() * kernel_flux));
  pencil.d = w * dk * w.transpose();
  return pencil;
}

PoincareEigen poincare_eigen(const TruthModel& m, const Eigen::MatrixXd& kernel_flux, double mu) {
  const PoincarePencil pencil = poincare_pencil(m, kernel_flux, mu);
  Eigen::MatrixXd ad = Eigen::MatrixXd(pencil.a) + pencil.d;
  ad = 0.5 * (ad + ad.transpose()).eval();
  const Eigen::Index n = ad.rows();
  PoincareEigen out;

  if (n < 200) {
    const Eigen::MatrixXd b = Eigen::MatrixXd(pencil.b);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(b, ad);
    if (ges.info() != Eigen::Success) throw NumericalError("Poincare pencil: A + D is not definite");
    out.lambda_max = ges.eigenvalues()(n - 1);
    out.eigenvector = ges.eigenvectors().col(n - 1);
    return out;
  }

  const Eigen::LLT<Eigen::MatrixXd> llt(ad);
  if (llt.info() != Eigen::Success) throw NumericalError("Poincare pencil: A + D is not definite");
  const auto L = llt.matrixL();
  const auto LT = llt.matrixU();
  // C = L^{-1} B L^{-T} is symmetric with the pencil's eigenvalues.
  auto apply = [&](const Eigen::MatrixXd& y) -> Eigen::MatrixXd {
    Eigen::MatrixXd z = LT.solve(y);
    z = pencil.b * z;
    return L.solve(z);
  };

  const Eigen::Index block = std::min<Eigen::Index>(8, n);
  Eigen::MatrixXd x(n, block);
  for (Eigen::Index j = 0; j < block; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, j) = std::cos(0.7 * static_cast<double>((i + 1) * (j + 1))) + (j == 0 ? 1.0 : 0.0);
    }
  }
  x = Eigen::HouseholderQR<Eigen::MatrixXd>(x).householderQ() * Eigen::MatrixXd::Identity(n, block);

  constexpr int kMaxIterations = 10000;
  for (int it = 1; it <= kMaxIterations; ++it) {
    const Eigen::MatrixXd z = apply(x);
    Eigen::MatrixXd h = x.transpose() * z;
    h = 0.5 * (h + h.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz(h);
    const double theta = ritz.eigenvalues()(block - 1);
    const Eigen::VectorXd s = ritz.eigenvectors().col(block - 1);
    const Eigen::VectorXd y = x * s;
    const double residual = (z * s - theta * y).norm();
    if (residual <= 1e-10 * std::abs(theta)) {
      out.lambda_max = theta;
      out.eigenvector = LT.solve(y);
      out.iterations = it;
      return out;
    }
    // Rotate to Ritz vectors so the leading column carries the top estimate.
    const Eigen::MatrixXd zr = z * ritz.eigenvectors().rowwise().reverse();
    x = Eigen::HouseholderQR<Eigen::MatrixXd>(zr).householderQ() *
        Eigen::MatrixXd::Identity(n, block);
  }
  throw NumericalError("Poincare eigenvalue iteration did not converge");
}

double poincare_constant(const TruthModel& m, double mu, PoincareConvention convention) {
  const Eigen::MatrixXd kflux = m.kernel_flux(kernel_space(m.graph()));
  const double lambda = poincare_eigen(m, kflux, mu).lambda_max;
  return convention == PoincareConvention::SquareRoot ? std::sqrt(lambda) : lambda;
}

BoundConstants stability_constants(const TruthModel& m, double mu, const ConstantsSettings& s) {
  if (!(mu >= s.mu_min && mu <= s.mu_max)) {
    throw ConfigError("parameter mu = " + std::to_string(mu) + " outside the admissible range [" +
                      std::to_string(s.mu_min) + ", " + std::to_string(s.mu_max) + "]");
  }
  double C0 = 0.0, C1 = 0.0, mu_cp = mu;
  if (s.mode == ConstantsMode::PerParameter) {
    std::tie(C0, C1) = coefficient_bounds(m.coefficients(), mu);
  } else {
    // mu d_base enters linearly and the pencil's D grows with mu, so the
    // extremes sit at the interval ends and C_P is largest at mu_min.
    const auto [lo_min, hi_min] = coefficient_bounds(m.coefficients(), s.mu_min);
    const auto [lo_max, hi_max] = coefficient_bounds(m.coefficients(), s.mu_max);
    C0 = std::min(lo_min, lo_max);
    C1 = std::max(hi_min, hi_max);
    mu_cp = s.mu_min;
  }
  if (!(C0 > 0.0)) throw NumericalError("coefficients admit no positive lower bound C0");
  return bound_constants_from(C0, C1, poincare_constant(m, mu_cp, s.convention));
}

double gamma_from_simulation(const std::vector<double>& times, const std::vector<double>& energies,
                             double s) {
  if (times.size() != energies.size()) throw ConfigError("times and energies differ in length");
  std::size_t first = 0;
  while (first < times.size() && times[first] < s) ++first;
  if (first == times.size()) throw NumericalError("no samples after the fit start");
  const double e_start = energies[first];
  if (!(e_start > 0.0)) throw NumericalError("energy at the fit start is not positive");

  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  std::size_t count = 0;
  for (std::size_t n = first; n < times.size(); ++n) {
    if (!(energies[n] >= 1e-14 * e_start)) break;
    const double y = std::log(energies[n]);
    st += times[n];
    sy += y;
    stt += times[n] * times[n];
    sty += times[n] * y;
    ++count;
  }
  if (count < 3) throw NumericalError("fewer than 3 usable energy samples for the decay fit");
  const double c = static_cast<double>(count);
  const double slope = (c * sty - st * sy) / (c * stt - st * st);
  if (!(slope < 0.0)) throw NumericalError("energy does not decay; no positive rate can be fitted");
  return -slope;
}

ResidualEstimator::ResidualEstimator(const TruthModel& m, const LoadTerms& loads,
                                     const ReducedBasis& rb)
    : dim_q_(rb.dim_q()), dim_v_(rb.dim_v()) {
  if (rb.q_basis.rows() != m.n_p() || rb.v_basis.rows() != m.n_u()) {
    throw ConfigError("reduced basis does not match the truth model");
  }
  amplitudes_.pressure_amplitudes = loads.pressure_amplitudes;
  amplitudes_.flux_amplitudes = loads.flux_amplitudes;
  const Eigen::MatrixXd& Q = rb.q_basis;
  const Eigen::MatrixXd& V = rb.v_basis;
  const Eigen::Index kp = loads.pressure_vectors.cols(), ku = loads.flux_vectors.cols();

  // rho_p = P theta - M_a Q p' - G V u
  Eigen::MatrixXd rp(m.n_p(), kp + dim_q_ + dim_v_);
  rp << loads.pressure_vectors, m.mass_a() * Q, m.divergence() * V;
  gram_p_ = rp.transpose() * m.mass_q().diagonal().cwiseInverse().asDiagonal() * rp;

  // rho_u = U theta - M_b V u' + G^T Q p - mu D V u
  Eigen::MatrixXd ru(m.n_u(), ku + dim_v_ + dim_q_ + dim_v_);
  ru << loads.flux_vectors, m.mass_b() * V, m.divergence().transpose() * Q, m.damping() * V;
  gram_u_ = ru.transpose() * m.solve_mass_v(ru);
  gram_u_ = 0.5 * (gram_u_ + gram_u_.transpose()).eval();
}

std::pair<double, double> ResidualEstimator::norms_sq(const Eigen::VectorXd& p,
                                                      const Eigen::VectorXd& u,
                                                      const Eigen::VectorXd& dp,
                                                      const Eigen::VectorXd& du, double mu,
                                                      double t) const {
  const Eigen::VectorXd theta_p = amplitudes_.pressure_amplitude(t);
  const Eigen::VectorXd theta_u = amplitudes_.flux_amplitude(t);
  Eigen::VectorXd cp(theta_p.size() + dim_q_ + dim_v_);
  cp << theta_p, -dp, -u;
  Eigen::VectorXd cu(theta_u.size() + dim_v_ + dim_q_ + dim_v_);
  cu << theta_u, -du, p, -mu * u;
  return {std::max(0.0, cp.dot(gram_p_ * cp)), std::max(0.0, cu.dot(gram_u_ * cu))};
}

ResidualNorms residual_norms(const ResidualEstimator& est, const Trajectory& reduced, double mu) {
  const std::size_t n = reduced.states.size();
  ResidualNorms out;
  out.rp_sq.assign(n, 0.0);
  out.ru_sq.assign(n, 0.0);
  const Eigen::Index nq = est.dim_q(), nv = est.dim_v();
  for (std::size_t k = 1; k < n; ++k) {
    const double tau = reduced.times[k] - reduced.times[k - 1];
    const Eigen::VectorXd& x = reduced.states[k];
    const Eigen::VectorXd dx = (x - reduced.states[k - 1]) / tau;
    const auto [rp, ru] =
        est.norms_sq(x.head(nq), x.tail(nv), dx.head(nq), dx.tail(nv), mu, reduced.times[k]);
    out.rp_sq[k] = rp;
    out.ru_sq[k] = ru;
  }
  return out;
}

std::vector<double> error_sq_series(const TruthModel& m, const ReducedBasis& rb,
                                    const Trajectory& truth, const Trajectory& reduced) {
  if (truth.states.size() != reduced.states.size()) {
    throw ConfigError("truth and reduced trajectories have mismatched time grids");
  }
  const Eigen::VectorXd hq = m.mass_q().diagonal();
  const Eigen::Index np = m.n_p(), nu = m.n_u(), nq = rb.dim_q(), nv = rb.dim_v();
  std::vector<double> out(truth.states.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (std::abs(truth.times[k] - reduced.times[k]) > 1e-12 * std::max(1.0, truth.times[k])) {
      throw ConfigError("truth and reduced trajectories have mismatched time grids");
    }
    const Eigen::VectorXd ep = truth.states[k].head(np) - rb.q_basis * reduced.states[k].head(nq);
    const Eigen::VectorXd eu = truth.states[k].tail(nu) - rb.v_basis * reduced.states[k].tail(nv);
    out[k] = ep.dot(hq.cwiseProduct(ep)) + eu.dot(m.mass_v() * eu);
  }
  return out;
}

CertifiedTrajectory certify(const ResidualNorms& residuals, const BoundConstants& k,
                            const std::vector<double>& times, const InitialError& e0,
                            const SolverSettings& settings, const std::vector<double>* err_sq) {
  if (!(k.gamma > 0.0)) throw NumericalError("stability constant gamma must be positive");
  const std::size_t n = times.size();
  if (residuals.rp_sq.size() != n || residuals.ru_sq.size() != n) {
    throw ConfigError("residual series and time grid differ in length");
  }
  if (err_sq && err_sq->size() != n) throw ConfigError("error series and time grid differ in length");
  if (static_cast<long>(n) != settings.steps() + 1) {
    throw ConfigError("certification needs every implicit Euler step on the time grid");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(times[i] - settings.time(static_cast<long>(i))) > 1e-9 * settings.step) {
      throw ConfigError("reduced trajectory time grid does not match the solver settings");
    }
  }

  CertifiedTrajectory c;
  c.times = times;
  c.rp_norm_sq = residuals.rp_sq;
  c.ru_norm_sq = residuals.ru_sq;
  c.delta.resize(n);
  c.delta_tilde.resize(n);
  const double e0_sq = e0.p_norm * e0.p_norm + e0.u_norm * e0.u_norm;
  const double e0_sum = e0.p_norm + e0.u_norm;
  const double tau = settings.step;
  const double decay = std::exp(-k.gamma * tau);
  double integral = 0.0, linear = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      integral = decay * integral + tau * (residuals.rp_sq[i] + residuals.ru_sq[i]);
      linear += tau * (std::sqrt(residuals.rp_sq[i]) + std::sqrt(residuals.ru_sq[i]));
    }
    c.delta[i] = k.Cprime * std::exp(-k.gamma * times[i]) * e0_sq + k.Cdprime * integral;
    const double s = e0_sum + linear;
    c.delta_tilde[i] = k.Ctilde * s * s;
  }

  if (err_sq) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    c.err_sq = *err_sq;
    c.eta.resize(n);
    c.eta_tilde.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = c.err_sq[i];
      c.eta[i] = e > 0.0 ? c.delta[i] / e : nan;
      c.eta_tilde[i] = e > 0.0 ? c.delta_tilde[i] / e : nan;
    }
  }
  return c;
}

}  // namespace netrb
