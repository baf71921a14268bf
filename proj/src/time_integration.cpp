#include "netrb/time_integration.hpp"

#include <cmath>

#include "netrb/error.hpp"

namespace netrb {

namespace {

void append_block(std::vector<Eigen::Triplet<double>>& out, const SparseMatrix& m, Eigen::Index r0,
                  Eigen::Index c0, double scale) {
  for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      out.emplace_back(r0 + it.row(), c0 + it.col(), scale * it.value());
    }
  }
}

class SparseStepper {
 public:
  SparseStepper(const TruthSystem& s, double mu, double tau) : s_(s) {
    const Eigen::Index np = s.n_p(), n = s.size();
    std::vector<Eigen::Triplet<double>> t;
    append_block(t, s.mass_a, 0, 0, 1.0);
    append_block(t, s.divergence, 0, np, tau);
    append_block(t, SparseMatrix(s.divergence.transpose()), np, 0, -tau);
    append_block(t, s.mass_b, np, np, 1.0);
    append_block(t, s.damping, np, np, tau * mu);
    SparseMatrix step(n, n);
    step.setFromTriplets(t.begin(), t.end());
    step.makeCompressed();
    lu_.analyzePattern(step);
    lu_.factorize(step);
    if (lu_.info() != Eigen::Success) throw NumericalError("step matrix factorization failed");
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return lu_.solve(rhs); }
  Eigen::VectorXd mass_times(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y(x.size());
    y.head(s_.n_p()) = s_.mass_a * x.head(s_.n_p());
    y.tail(s_.n_u()) = s_.mass_b * x.tail(s_.n_u());
    return y;
  }

 private:
  const TruthSystem& s_;
  mutable Eigen::SparseLU<SparseMatrix> lu_;
};

class DenseStepper {
 public:
  DenseStepper(const ReducedSystem& s, double mu, double tau) : s_(s) {
    const Eigen::Index np = s.n_p(), nu = s.n_u();
    Eigen::MatrixXd step = Eigen::MatrixXd::Zero(s.size(), s.size());
    step.topLeftCorner(np, np) = s.mass_a;
    step.topRightCorner(np, nu) = tau * s.divergence;
    step.bottomLeftCorner(nu, np) = -tau * s.divergence.transpose();
    step.bottomRightCorner(nu, nu) = s.mass_b + tau * mu * s.damping;
    lu_.compute(step);
    if (!std::isfinite(lu_.rcond()) || lu_.rcond() < 1e-15) {
      throw NumericalError("reduced step matrix is singular");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return lu_.solve(rhs); }
  Eigen::VectorXd mass_times(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y(x.size());
    y.head(s_.n_p()) = s_.mass_a * x.head(s_.n_p());
    y.tail(s_.n_u()) = s_.mass_b * x.tail(s_.n_u());
    return y;
  }

 private:
  const ReducedSystem& s_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

template <class Matrix>
struct StepperFor;
template <>
struct StepperFor<SparseMatrix> {
  using type = SparseStepper;
};
template <>
struct StepperFor<Eigen::MatrixXd> {
  using type = DenseStepper;
};

}  // namespace

TruthSystem truth_system(const TruthModel& m, const LoadTerms& loads) {
  return {m.mass_a(), m.mass_b(), m.damping(), m.divergence(), loads};
}

long SolverSettings::steps() const {
  if (!(step > 0.0) || !(t_end >= step)) throw ConfigError("solver needs 0 < step <= t_end");
  if (record_every < 1) throw ConfigError("record_every must be at least 1");
  const double ratio = t_end / step;
  const long n = std::lround(ratio);
  if (std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio) {
    throw ConfigError("t_end must be an integer multiple of the step size");
  }
  return n;
}

template <class Matrix>
Trajectory integrate(const WaveSystem<Matrix>& system, double mu, const Eigen::VectorXd& x0,
                     const SolverSettings& settings) {
  if (x0.size() != system.size()) throw ConfigError("initial state has the wrong dimension");
  const long n_steps = settings.steps();
  const double tau = settings.step;
  const typename StepperFor<Matrix>::type stepper(system, mu, tau);
  const Eigen::Index np = system.n_p(), nu = system.n_u();

  Trajectory traj;
  const auto n_records = static_cast<std::size_t>(n_steps / settings.record_every + 1);
  traj.times.reserve(n_records);
  traj.states.reserve(n_records);
  traj.energies.reserve(n_records);
  auto record = [&](long n, const Eigen::VectorXd& x) {
    traj.times.push_back(settings.time(n));
    traj.states.push_back(x);
    traj.energies.push_back(energy(system, x));
  };

  Eigen::VectorXd x = x0;
  record(0, x);
  Eigen::VectorXd rhs(system.size());
  for (long n = 1; n <= n_steps; ++n) {
    const double t = settings.time(n);
    rhs = stepper.mass_times(x);
    if (system.loads.pressure_vectors.cols() > 0) {
      rhs.head(np).noalias() += tau * system.loads.pressure_load(t);
    }
    if (system.loads.flux_vectors.cols() > 0) {
      rhs.tail(nu).noalias() += tau * system.loads.flux_load(t);
    }
    x = stepper.solve(rhs);
    if (!x.allFinite()) throw NumericalError("time integration produced a non-finite state");
    if (n % settings.record_every == 0) record(n, x);
  }
  return traj;
}

template <class Matrix>
double energy(const WaveSystem<Matrix>& system, const Eigen::VectorXd& x) {
  const auto p = x.head(system.n_p());
  const auto u = x.tail(system.n_u());
  return 0.5 * (p.dot(system.mass_a * p) + u.dot(system.mass_b * u));
}

template <class Matrix>
std::vector<double> derivative_energies(const WaveSystem<Matrix>& system, const Trajectory& traj) {
  std::vector<double> out;
  for (std::size_t n = 1; n < traj.states.size(); ++n) {
    const double dt = traj.times[n] - traj.times[n - 1];
    out.push_back(energy(system, Eigen::VectorXd((traj.states[n] - traj.states[n - 1]) / dt)));
  }
  return out;
}

template Trajectory integrate(const TruthSystem&, double, const Eigen::VectorXd&,
                              const SolverSettings&);
template Trajectory integrate(const ReducedSystem&, double, const Eigen::VectorXd&,
                              const SolverSettings&);
template double energy(const TruthSystem&, const Eigen::VectorXd&);
template double energy(const ReducedSystem&, const Eigen::VectorXd&);
template std::vector<double> derivative_energies(const TruthSystem&, const Trajectory&);
template std::vector<double> derivative_energies(const ReducedSystem&, const Trajectory&);

}  // namespace netrb
