#include <cmath>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "netrb/certification.hpp"
#include "netrb/error.hpp"
#include "netrb/network.hpp"
#include "netrb/reduction.hpp"
#include "support.hpp"

using namespace netrb;
using namespace netrb::testing;

namespace {

LoadTerms no_loads(const TruthModel& m) {
  return {Eigen::MatrixXd(m.n_p(), 0), Eigen::MatrixXd(m.n_u(), 0), {}, {}};
}

// Largest eigenvalue of B x = l C x by a dense solve of the pencil.
double dense_lambda_max(const Eigen::MatrixXd& b, const Eigen::MatrixXd& c) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(b, c);
  return es.eigenvalues().maxCoeff();
}

ResidualNorms constant_residuals(std::size_t n, double rp, double ru) {
  ResidualNorms r;
  r.rp_sq.assign(n, rp);
  r.ru_sq.assign(n, ru);
  r.rp_sq[0] = r.ru_sq[0] = 0.0;
  return r;
}

std::vector<double> grid(const SolverSettings& s) {
  std::vector<double> t;
  for (long n = 0; n <= s.steps(); ++n) t.push_back(s.time(n));
  return t;
}

}  // namespace

TEST_CASE("single-cell pencil against a closed-form 2x2 solve") {
  const TruthModel m = assemble_truth(single_edge_graph(), uniform_coefficients(1, 1, 1, 1), 1);
  const Eigen::MatrixXd k = kernel_flux_of(m);
  const PoincarePencil pen = poincare_pencil(m, k, 1.0);
  const Eigen::MatrixXd b = Eigen::MatrixXd(pen.b), c = Eigen::MatrixXd(pen.a) + pen.d;

  Eigen::Matrix2d b_ref, a_ref, d_ref;
  b_ref << 2.0 / 6, 1.0 / 6, 1.0 / 6, 2.0 / 6;
  a_ref << 1, -1, -1, 1;
  d_ref << 0.25, 0.25, 0.25, 0.25;
  CHECK((b - b_ref).norm() < 1e-14);
  CHECK((Eigen::MatrixXd(pen.a) - a_ref).norm() < 1e-14);
  CHECK((pen.d - d_ref).norm() < 1e-14);

  // det(B - l C) = 0 as a quadratic in l.
  const Eigen::Matrix2d cr = a_ref + d_ref;
  const double qa = cr(0, 0) * cr(1, 1) - cr(0, 1) * cr(0, 1);
  const double qb = -(b_ref(0, 0) * cr(1, 1) + b_ref(1, 1) * cr(0, 0) - 2 * b_ref(0, 1) * cr(0, 1));
  const double qc = b_ref(0, 0) * b_ref(1, 1) - b_ref(0, 1) * b_ref(0, 1);
  const double lmax = (-qb + std::sqrt(qb * qb - 4 * qa * qc)) / (2 * qa);
  CHECK(relative_difference(poincare_eigen(m, k, 1.0).lambda_max, lmax) < 1e-12);
  CHECK(relative_difference(poincare_constant(m, 1.0), std::sqrt(lmax)) < 1e-12);
  CHECK(relative_difference(poincare_constant(m, 1.0, PoincareConvention::Eigenvalue), lmax) < 1e-12);
  CHECK(relative_difference(dense_lambda_max(b, c), lmax) < 1e-12);
}

TEST_CASE("Poincare constant depends on mu d only through the product") {
  EdgeCoefficients c1 = diamond_coefficients(), c2 = c1;
  c2.d_base *= 8.0;
  const TruthModel m1 = assemble_truth(diamond_graph(), c1, 10);
  const TruthModel m2 = assemble_truth(diamond_graph(), c2, 10);
  CHECK(relative_difference(poincare_constant(m1, 2.0), poincare_constant(m2, 0.25)) < 1e-12);
}

TEST_CASE("iterative pencil solver agrees with a dense solve") {
  const TruthModel m = diamond_model(40);  // n_u = 283 takes the iterative path
  REQUIRE(m.n_u() > 200);
  const Eigen::MatrixXd k = kernel_flux_of(m);
  for (double mu : {0.01, 1.0, 10.0}) {
    const PoincarePencil pen = poincare_pencil(m, k, mu);
    const double ref = dense_lambda_max(Eigen::MatrixXd(pen.b), Eigen::MatrixXd(pen.a) + pen.d);
    CHECK(relative_difference(poincare_eigen(m, k, mu).lambda_max, ref) < 1e-9);
  }
}

TEST_CASE("Poincare inequality holds on the diamond and is tight") {
  const TruthModel m = diamond_model(100);
  const Eigen::MatrixXd k = kernel_flux_of(m);
  const PoincarePencil pen = poincare_pencil(m, k, 1.0);
  const PoincareEigen eig = poincare_eigen(m, k, 1.0);
  const double cp = poincare_constant(m, 1.0);
  auto ratio = [&](const Eigen::VectorXd& u) {
    const double rhs = u.dot(pen.a * u) + u.dot(pen.d * u);
    return u.dot(pen.b * u) / rhs;
  };
  std::mt19937_64 rng(17);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) worst = std::max(worst, ratio(random_vector(rng, m.n_u())));
  CHECK(worst <= cp * cp);
  CHECK(ratio(eig.eigenvector) >= 0.999 * cp * cp);
  // Smooth and kernel directions too.
  for (Eigen::Index j = 0; j < k.cols(); ++j) CHECK(ratio(k.col(j)) <= cp * cp);
}

TEST_CASE("stability constants from the coefficient tables") {
  const TruthModel m = diamond_model(10);
  const ConstantsSettings s;
  const BoundConstants k1 = stability_constants(m, 1.0, s);
  CHECK(k1.C0 == 0.25);
  CHECK(k1.C1 == 4.0);
  CHECK(k1.Cprime == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(k1.Cdprime == k1.Cprime);
  CHECK(k1.gamma == doctest::Approx((2.0 / 3) * (0.25 / 4) * 0.25 / (0.5 + 16 * k1.C_P)).epsilon(1e-14));
  CHECK(k1.Ctilde == doctest::Approx(16.0));
  CHECK(k1.gamma > 0);

  const BoundConstants k2 = stability_constants(m, 0.01, s);
  CHECK(k2.C0 == doctest::Approx(0.005));
  CHECK(k2.Cprime == doctest::Approx(3 * std::sqrt(800.0)).epsilon(1e-14));
  CHECK(k2.Cprime == doctest::Approx(84.853).epsilon(1e-5));

  const TruthModel flat = assemble_truth(diamond_graph(), uniform_coefficients(7, 2, 2, 2), 4);
  const BoundConstants k3 = stability_constants(flat, 1.0, s);
  CHECK(k3.Cprime == 3.0);
  CHECK(k3.Cdprime == 3.0);

  CHECK_THROWS_AS(stability_constants(m, 0.001, s), ConfigError);
  CHECK_THROWS_AS(stability_constants(m, 11.0, s), ConfigError);

  ConstantsSettings worst = s;
  worst.mode = ConstantsMode::WorstCase;
  const BoundConstants kw = stability_constants(m, 3.0, worst);
  CHECK(kw.C0 == doctest::Approx(0.005));
  CHECK(kw.C1 == doctest::Approx(40.0));
  CHECK(kw.gamma <= stability_constants(m, 3.0, s).gamma);
}

TEST_CASE("decay rate fits") {
  std::vector<double> t, e;
  for (int n = 0; n <= 100; ++n) {
    t.push_back(0.05 * n);
    e.push_back(std::exp(-2.0 * t.back()));
  }
  CHECK(gamma_from_simulation(t, e, 1.0) == doctest::Approx(2.0).epsilon(1e-10));
  std::vector<double> flat(t.size(), 3.0);
  CHECK_THROWS_AS(gamma_from_simulation(t, flat, 1.0), NumericalError);
  CHECK_THROWS_AS(gamma_from_simulation(t, e, 4.95), NumericalError);

  // Underflowing tail is excluded from the window.
  std::vector<double> fast;
  for (double x : t) fast.push_back(std::exp(-40.0 * x));
  CHECK(gamma_from_simulation(t, fast, 0.0) == doctest::Approx(40.0).epsilon(1e-10));
}

TEST_CASE("reduced model decays at least as fast as the certified rate") {
  auto model = std::make_shared<const TruthModel>(diamond_model(20));
  const TruthModel& m = *model;
  const Eigen::MatrixXd k = kernel_flux_of(m);
  const TruthSystem ts = truth_system(m, assemble_loads(m, diamond_data()));
  const Trajectory truth = integrate(ts, 1.0, Eigen::VectorXd::Zero(m.size()), {20.0, 0.02, 1});
  const ReducedBasis rb = constrained_pca(m, k, {&truth}, PcaSettings{}, MinimumNormRightInverse(m));
  const ReducedSystem rs = project(m, no_loads(m), rb);

  std::mt19937_64 rng(3);
  const Trajectory run = integrate(rs, 1.0, random_vector(rng, rb.dim()), {20.0, 0.02, 1});
  const std::vector<double> times(run.times.begin() + 1, run.times.end());
  const double fit = gamma_from_simulation(times, derivative_energies(rs, run), 1.0);
  const double gamma = stability_constants(m, 1.0, {}).gamma;
  MESSAGE("gamma fit " << fit << " certified " << gamma);
  CHECK(fit >= gamma);
}

TEST_CASE("offline-online residual norms match the full-order residual") {
  const TruthModel m = diamond_model(8);
  const SourceAndBoundaryData data = diamond_data();
  const LoadTerms loads = assemble_loads(m, data);
  std::mt19937_64 rng(11);

  ReducedBasis rb;
  rb.q_basis = Eigen::MatrixXd(m.n_p(), 3);
  rb.v_basis = Eigen::MatrixXd(m.n_u(), 5);
  for (Eigen::Index j = 0; j < 3; ++j) rb.q_basis.col(j) = random_vector(rng, m.n_p());
  for (Eigen::Index j = 0; j < 5; ++j) rb.v_basis.col(j) = random_vector(rng, m.n_u());
  rb.blocks = {{3, 5}};
  const ResidualEstimator est(m, loads, rb);

  const Eigen::MatrixXd mq = Eigen::MatrixXd(m.mass_q()), mv = Eigen::MatrixXd(m.mass_v());
  for (double t : {0.3, 1.7, 5.0}) {
    for (double mu : {0.01, 2.3}) {
      const Eigen::VectorXd p = random_vector(rng, 3), u = random_vector(rng, 5);
      const Eigen::VectorXd dp = random_vector(rng, 3), du = random_vector(rng, 5);
      // Full-order residual of M_a p' + G u = F and M_b u' - G^T p + mu D u = L,
      // with the loads taken from the operator applied to a zero state.
      const StateVector zero{Eigen::VectorXd::Zero(m.n_p()), Eigen::VectorXd::Zero(m.n_u())};
      const StateVector f = apply_operator(m, mu, zero, t, data);
      const StateVector x{rb.q_basis * p, rb.v_basis * u};
      const StateVector ax = apply_operator(m, mu, x, t, data);
      const Eigen::VectorXd rho_p = ax.p - m.mass_a() * (rb.q_basis * dp);
      const Eigen::VectorXd rho_u = ax.u - m.mass_b() * (rb.v_basis * du);
      const double rp = rho_p.dot(mq.ldlt().solve(rho_p));
      const double ru = rho_u.dot(mv.ldlt().solve(rho_u));
      CHECK(f.p.norm() + f.u.norm() >= 0.0);
      const auto [rp_online, ru_online] = est.norms_sq(p, u, dp, du, mu, t);
      CHECK(relative_difference(rp_online, rp) < 1e-10);
      CHECK(relative_difference(ru_online, ru) < 1e-10);
    }
  }
}

TEST_CASE("full-space basis certifies an exact reduction") {
  const TruthModel m = diamond_model(3);
  const LoadTerms loads = assemble_loads(m, diamond_data());
  ReducedBasis rb;
  rb.q_basis = Eigen::MatrixXd(m.n_p(), m.n_p());
  rb.q_basis.setZero();
  for (Eigen::Index i = 0; i < m.n_p(); ++i) rb.q_basis(i, i) = 1.0 / std::sqrt(m.mass_q().coeff(i, i));
  const Eigen::MatrixXd mv = Eigen::MatrixXd(m.mass_v());
  const Eigen::MatrixXd l = mv.llt().matrixL();
  rb.v_basis = l.transpose().triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd::Identity(m.n_u(), m.n_u()));
  rb.blocks = {{m.n_p(), m.n_u()}};

  const SolverSettings set{5.0, 0.02, 1};
  const double mu = 2.3;
  const Trajectory truth = integrate(truth_system(m, loads), mu, Eigen::VectorXd::Zero(m.size()), set);
  const Trajectory red = integrate(project(m, loads, rb), mu, Eigen::VectorXd::Zero(rb.dim()), set);
  const ResidualNorms r = residual_norms(ResidualEstimator(m, loads, rb), red, mu);
  const std::vector<double> err = error_sq_series(m, rb, truth, red);
  const CertifiedTrajectory c =
      certify(r, stability_constants(m, mu, {}), red.times, InitialError{}, set, &err);
  // Exact up to the roundoff floor of the quadratic forms, measured against
  // the bound of the coarsest compatible basis at the same parameter.
  const ReducedBasis coarse = kernel_only_basis(m, kernel_flux_of(m));
  const Trajectory cred = integrate(project(m, loads, coarse), mu, Eigen::VectorXd::Zero(coarse.dim()), set);
  const CertifiedTrajectory cc = certify(residual_norms(ResidualEstimator(m, loads, coarse), cred, mu),
                                         stability_constants(m, mu, {}), cred.times, InitialError{}, set);
  double worst_delta = 0.0, worst_err = 0.0, worst_res = 0.0, coarse_res = 0.0;
  for (std::size_t n = 0; n < c.times.size(); ++n) {
    worst_delta = std::max(worst_delta, c.delta[n]);
    worst_err = std::max(worst_err, err[n]);
    worst_res = std::max(worst_res, r.rp_sq[n] + r.ru_sq[n]);
    coarse_res = std::max(coarse_res, cc.rp_norm_sq[n] + cc.ru_norm_sq[n]);
  }
  MESSAGE("full basis Delta " << worst_delta << " vs coarse " << cc.delta.back());
  CHECK(worst_delta <= 1e-12 * cc.delta.back());
  CHECK(worst_res <= 1e-12 * coarse_res);
  CHECK(worst_err < 1e-20);
  CHECK(c.delta[0] == 0.0);
}

TEST_CASE("bound recursion matches the geometric closed form") {
  const SolverSettings set{10.0, 0.02, 1};
  const std::vector<double> t = grid(set);
  BoundConstants k;
  k.gamma = 0.37;
  k.Cprime = k.Cdprime = 12.0;
  k.Ctilde = 16.0;
  const double rp = 2e-3, ru = 5e-4;
  const CertifiedTrajectory c = certify(constant_residuals(t.size(), rp, ru), k, t, {}, set);
  const double q = std::exp(-k.gamma * set.step);
  for (std::size_t n = 0; n < t.size(); ++n) {
    const double closed = k.Cdprime * set.step * (rp + ru) * (1 - std::pow(q, double(n))) / (1 - q);
    CHECK(std::abs(c.delta[n] - closed) <= 1e-12 * std::max(closed, 1e-300));
    const double lin = n * set.step * (std::sqrt(rp) + std::sqrt(ru));
    CHECK(c.delta_tilde[n] == doctest::Approx(k.Ctilde * lin * lin).epsilon(1e-12));
  }
  const double limit = k.Cdprime * set.step * (rp + ru) / (1 - q);
  CHECK(c.delta.back() < limit);
  CHECK(c.delta.back() > 0.9 * limit);

  // Initial error term decays as C' e^{-gamma t} |e0|^2.
  const CertifiedTrajectory c0 = certify(constant_residuals(t.size(), 0, 0), k, t, {0.3, 0.4}, set);
  CHECK(c0.delta[0] == doctest::Approx(12.0 * 0.25));
  CHECK(c0.delta[250] == doctest::Approx(12.0 * 0.25 * std::exp(-0.37 * 5.0)));
  CHECK(c0.delta_tilde[100] == doctest::Approx(16.0 * 0.49));
}

TEST_CASE("bound is monotone in gamma") {
  const SolverSettings set{4.0, 0.02, 1};
  const std::vector<double> t = grid(set);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ResidualNorms r;
  for (std::size_t n = 0; n < t.size(); ++n) {
    r.rp_sq.push_back(u(rng));
    r.ru_sq.push_back(u(rng) * u(rng));
  }
  BoundConstants slow, fast;
  slow.Cprime = slow.Cdprime = fast.Cprime = fast.Cdprime = 5.0;
  slow.gamma = 0.01;
  fast.gamma = 0.4;
  const CertifiedTrajectory a = certify(r, slow, t, {}, set), b = certify(r, fast, t, {}, set);
  for (std::size_t n = 0; n < t.size(); ++n) CHECK(b.delta[n] <= a.delta[n]);
}

TEST_CASE("certify input validation and effectivities") {
  const SolverSettings set{1.0, 0.1, 1};
  const std::vector<double> t = grid(set);
  BoundConstants k;
  k.Cprime = k.Cdprime = 3.0;
  k.Ctilde = 1.0;
  CHECK_THROWS_AS(certify(constant_residuals(t.size(), 1, 1), k, t, {}, set), NumericalError);
  k.gamma = 0.5;
  CHECK_THROWS_AS(certify(constant_residuals(t.size() - 1, 1, 1), k, t, {}, set), ConfigError);
  std::vector<double> shifted = t;
  shifted[3] += 0.01;
  CHECK_THROWS_AS(certify(constant_residuals(t.size(), 1, 1), k, shifted, {}, set), ConfigError);
  CHECK_THROWS_AS(certify(constant_residuals(t.size(), 1, 1), k, t, {}, SolverSettings{2.0, 0.1, 1}),
                  ConfigError);

  std::vector<double> err(t.size(), 0.01);
  err[0] = 0.0;
  const CertifiedTrajectory c = certify(constant_residuals(t.size(), 1, 1), k, t, {}, set, &err);
  CHECK(std::isnan(c.eta[0]));
  CHECK(std::isnan(c.eta_tilde[0]));
  CHECK(c.eta[4] == doctest::Approx(c.delta[4] / 0.01));
  CHECK(c.eta_tilde[4] == doctest::Approx(c.delta_tilde[4] / 0.01));
}

TEST_CASE("both bounds are rigorous for a small trained basis") {
  auto model = std::make_shared<const TruthModel>(diamond_model(10));
  const TruthModel& m = *model;
  const Eigen::MatrixXd k = kernel_flux_of(m);
  const LoadTerms loads = assemble_loads(m, diamond_data());
  const SolverSettings set{20.0, 0.02, 1};
  const TruthSystem ts = truth_system(m, loads);
  const Trajectory seed = integrate(ts, 1.0, Eigen::VectorXd::Zero(m.size()), set);
  PcaSettings pca;
  pca.max_modes = 4;
  const ReducedBasis rb = constrained_pca(m, k, {&seed}, pca, MinimumNormRightInverse(m));
  const ResidualEstimator est(m, loads, rb);
  const ReducedSystem rs = project(m, loads, rb);
  for (double mu : {0.01, 0.2, 2.3, 10.0}) {
    const Trajectory truth = integrate(ts, mu, Eigen::VectorXd::Zero(m.size()), set);
    const Trajectory red = integrate(rs, mu, Eigen::VectorXd::Zero(rb.dim()), set);
    const std::vector<double> err = error_sq_series(m, rb, truth, red);
    const CertifiedTrajectory c = certify(residual_norms(est, red, mu), stability_constants(m, mu, {}),
                                          red.times, {}, set, &err);
    std::size_t violations = 0;
    double eta_min = 1e300;
    for (std::size_t n = 0; n < err.size(); ++n) {
      if (err[n] > c.delta[n] || err[n] > c.delta_tilde[n]) ++violations;
      if (err[n] > 0) eta_min = std::min(eta_min, c.eta[n]);
    }
    MESSAGE("mu " << mu << " max err " << *std::max_element(err.begin(), err.end()) << " Delta(T) "
                  << c.delta.back() << " DeltaTilde(T) " << c.delta_tilde.back() << " min eta " << eta_min);
    CHECK(violations == 0);
    CHECK(eta_min >= 1.0);
  }
}

TEST_CASE("homogeneous truth runs obey the exponential decay certificate") {
  const TruthModel m = diamond_model(20);
  const TruthSystem ts = truth_system(m, no_loads(m));
  const Eigen::MatrixXd mq = Eigen::MatrixXd(m.mass_q()), mv = Eigen::MatrixXd(m.mass_v());
  std::mt19937_64 rng(23);
  for (double mu : {0.01, 1.0, 10.0}) {
    const BoundConstants k = stability_constants(m, mu, {});
    for (int trial = 0; trial < 3; ++trial) {
      const Trajectory run = integrate(ts, mu, random_vector(rng, m.size()), {10.0, 0.02, 5});
      std::vector<double> norm_sq;
      for (const auto& x : run.states) {
        const Eigen::VectorXd p = x.head(m.n_p()), u = x.tail(m.n_u());
        norm_sq.push_back(p.dot(mq * p) + u.dot(mv * u));
      }
      double worst = 0.0;
      for (std::size_t s = 0; s < norm_sq.size(); ++s)
        for (std::size_t t = s; t < norm_sq.size(); ++t)
          worst = std::max(worst, norm_sq[t] / (k.Cprime * std::exp(-k.gamma * (run.times[t] - run.times[s])) *
                                                 norm_sq[s]));
      MESSAGE("mu " << mu << " worst decay ratio " << worst);
      CHECK(worst <= 1.0);
    }
  }
}
