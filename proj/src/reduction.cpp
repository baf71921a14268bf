#include "netrb/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "netrb/error.hpp"

namespace netrb {

namespace {

/// Orthonormalizes the columns of `fresh` against `existing` and each other
/// in the inner product of `mass`. Columns whose norm collapses below
/// drop_tol times their original norm are discarded.
Eigen::MatrixXd orthonormalize_against(const Eigen::MatrixXd& existing, const Eigen::MatrixXd& fresh,
                                       const SparseMatrix& mass, double drop_tol) {
  Eigen::MatrixXd basis(existing.rows(), existing.cols() + fresh.cols());
  basis.leftCols(existing.cols()) = existing;
  Eigen::Index count = existing.cols();
  for (Eigen::Index j = 0; j < fresh.cols(); ++j) {
    Eigen::VectorXd c = fresh.col(j);
    const double original = std::sqrt(std::max(0.0, c.dot(mass * c)));
    if (original == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      if (count == 0) break;
      const auto b = basis.leftCols(count);
      c -= b * (b.transpose() * (mass * c));
    }
    const double norm = std::sqrt(std::max(0.0, c.dot(mass * c)));
    if (norm <= drop_tol * original) continue;
    basis.col(count++) = c / norm;
  }
  return basis.middleCols(existing.cols(), count - existing.cols());
}

Eigen::MatrixXd deflate(const Eigen::MatrixXd& snapshots, const Eigen::MatrixXd& q,
                        const Eigen::VectorXd& hq) {
  Eigen::MatrixXd s = snapshots;
  if (q.cols() == 0) return s;
  for (int pass = 0; pass < 2; ++pass) s -= q * (q.transpose() * hq.asDiagonal() * s);
  return s;
}

ParameterEvaluation evaluate_one(const ReductionProblem& problem, const ReducedBasis& rb,
                                 const ReducedSystem& reduced, const ResidualEstimator& estimator,
                                 const BoundConstants& constants, double mu, const Trajectory* truth) {
  const TruthModel& m = *problem.model;
  SolverSettings solver = problem.solver;
  solver.record_every = 1;

  const ReducedInitial init = project_initial(m, rb, problem.p0, problem.u0);
  const Trajectory traj = integrate(reduced, mu, init.coefficients, solver);
  const ResidualNorms res = residual_norms(estimator, traj, mu);

  ParameterEvaluation out;
  out.mu = mu;
  if (truth) {
    const std::vector<double> err = error_sq_series(m, rb, *truth, traj);
    out.certified = certify(res, constants, traj.times, init.error, solver, &err);
  } else {
    out.certified = certify(res, constants, traj.times, init.error, solver);
  }
  out.max_delta = *std::max_element(out.certified.delta.begin(), out.certified.delta.end());
  out.max_delta_tilde =
      *std::max_element(out.certified.delta_tilde.begin(), out.certified.delta_tilde.end());
  return out;
}

}  // namespace

MinimumNormRightInverse::MinimumNormRightInverse(const TruthModel& m)
    : hq_(m.mass_q().diagonal()) {
  const Eigen::MatrixXd gt = Eigen::MatrixXd(m.divergence().transpose());
  mv_inv_gt_ = m.solve_mass_v(gt);
  Eigen::MatrixXd schur = m.divergence() * mv_inv_gt_;
  schur = 0.5 * (schur + schur.transpose()).eval();
  schur_.compute(schur);
  if (schur_.info() != Eigen::Success) {
    throw NumericalError("divergence matrix lacks full row rank; no right inverse exists");
  }
}

Eigen::MatrixXd MinimumNormRightInverse::operator()(const Eigen::MatrixXd& q) const {
  return mv_inv_gt_ * schur_.solve(hq_.asDiagonal() * q);
}

Eigen::MatrixXd joint_snapshots(const TruthModel& m, const std::vector<const Trajectory*>& trajs) {
  std::size_t count = 0;
  for (const Trajectory* t : trajs) count += t->states.size();
  const Eigen::Index np = m.n_p(), nu = m.n_u();
  const auto L = static_cast<Eigen::Index>(count);
  Eigen::MatrixXd s(np, 2 * L);
  Eigen::Index col = 0;
  for (const Trajectory* t : trajs) {
    for (const Eigen::VectorXd& x : t->states) {
      s.col(col) = x.head(np);
      s.col(L + col) = m.derivative(Eigen::VectorXd(x.tail(nu)));
      ++col;
    }
  }
  return s;
}

Eigen::MatrixXd pca_modes(const TruthModel& m, const Eigen::MatrixXd& snapshots,
                          const PcaSettings& s, double floor) {
  const Eigen::Index np = m.n_p();
  if (snapshots.cols() == 0 || s.max_modes <= 0) return Eigen::MatrixXd(np, 0);
  const Eigen::VectorXd w = m.mass_q().diagonal().cwiseSqrt();
  const Eigen::MatrixXd y = w.asDiagonal() * snapshots;

  // Spatial correlation or snapshot Gram, whichever is smaller; both give
  // the same principal subspace.
  const bool spatial = np <= y.cols();
  Eigen::MatrixXd corr = spatial ? Eigen::MatrixXd(y * y.transpose()) : Eigen::MatrixXd(y.transpose() * y);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
  if (eig.info() != Eigen::Success) throw NumericalError("snapshot correlation eigensolver failed");
  const Eigen::VectorXd lambda = eig.eigenvalues().reverse().cwiseMax(0.0);
  const Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();

  const double total = lambda.sum();
  if (!(total > 0.0)) return Eigen::MatrixXd(np, 0);
  const double cutoff_level = floor >= 0.0 ? floor : 1e-14 * lambda(0);
  Eigen::Index r = 0;
  double captured = 0.0;
  while (r < lambda.size() && r < s.max_modes && lambda(r) > cutoff_level &&
         captured < (1.0 - s.energy_cutoff) * total) {
    captured += lambda(r);
    ++r;
  }

  Eigen::MatrixXd modes(np, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    if (spatial) {
      modes.col(j) = vecs.col(j).cwiseQuotient(w);
    } else {
      modes.col(j) = snapshots * vecs.col(j) / std::sqrt(lambda(j));
    }
  }
  return modes;
}

ReducedBasis kernel_only_basis(const TruthModel& m, const Eigen::MatrixXd& kernel_flux) {
  ReducedBasis rb;
  rb.q_basis = Eigen::MatrixXd(m.n_p(), 0);
  rb.v_basis = orthonormalize_against(Eigen::MatrixXd(m.n_u(), 0), kernel_flux, m.mass_v(), 1e-10);
  if (rb.v_basis.cols() != kernel_flux.cols()) throw NumericalError("kernel vectors are dependent");
  rb.kernel_dim = rb.v_basis.cols();
  rb.blocks = {{0, rb.kernel_dim}};
  return rb;
}

ReducedBasis enrich(const TruthModel& m, const ReducedBasis& rb, const Eigen::MatrixXd& q_modes,
                    const RightInverse& right_inverse) {
  const Eigen::MatrixXd q_new = orthonormalize_against(rb.q_basis, q_modes, m.mass_q(), 1e-8);
  ReducedBasis out = rb;
  if (q_new.cols() == 0) return out;
  const Eigen::MatrixXd v_raw = right_inverse(q_new);
  const Eigen::MatrixXd v_new = orthonormalize_against(rb.v_basis, v_raw, m.mass_v(), 1e-10);
  if (v_new.cols() != q_new.cols()) {
    throw NumericalError("right-inverse images are dependent on the current flux space");
  }
  out.q_basis.conservativeResize(Eigen::NoChange, rb.dim_q() + q_new.cols());
  out.q_basis.rightCols(q_new.cols()) = q_new;
  out.v_basis.conservativeResize(Eigen::NoChange, rb.dim_v() + v_new.cols());
  out.v_basis.rightCols(v_new.cols()) = v_new;
  out.blocks.emplace_back(out.dim_q(), out.dim_v());
  return out;
}

ReducedBasis constrained_pca(const TruthModel& m, const Eigen::MatrixXd& kernel_flux,
                             const std::vector<const Trajectory*>& snapshots, const PcaSettings& s,
                             const RightInverse& right_inverse) {
  const ReducedBasis base = kernel_only_basis(m, kernel_flux);
  const Eigen::MatrixXd modes = pca_modes(m, joint_snapshots(m, snapshots), s);
  if (modes.cols() == 0) return base;
  return enrich(m, base, modes, right_inverse);
}

ReducedInitial project_initial(const TruthModel& m, const ReducedBasis& rb, const Eigen::VectorXd& p0,
                               const Eigen::VectorXd& u0) {
  const Eigen::VectorXd hq = m.mass_q().diagonal();
  const Eigen::VectorXd cp = rb.q_basis.transpose() * hq.cwiseProduct(p0);
  const Eigen::VectorXd cu = rb.v_basis.transpose() * (m.mass_v() * u0);
  const Eigen::VectorXd ep = p0 - rb.q_basis * cp;
  const Eigen::VectorXd eu = u0 - rb.v_basis * cu;
  ReducedInitial out;
  out.coefficients.resize(cp.size() + cu.size());
  out.coefficients << cp, cu;
  out.error.p_norm = std::sqrt(std::max(0.0, ep.dot(hq.cwiseProduct(ep))));
  out.error.u_norm = std::sqrt(std::max(0.0, eu.dot(m.mass_v() * eu)));
  return out;
}

ParameterEvaluation evaluate_parameter(const ReductionProblem& problem, const ReducedBasis& rb,
                                       const ResidualEstimator& estimator,
                                       const BoundConstants& constants, double mu,
                                       const Trajectory* truth) {
  const ReducedSystem reduced = project(*problem.model, problem.loads, rb);
  return evaluate_one(problem, rb, reduced, estimator, constants, mu, truth);
}

std::vector<ParameterEvaluation> evaluate_parameters(const ReductionProblem& problem,
                                                     const ReducedBasis& rb,
                                                     const std::vector<double>& mus,
                                                     const std::vector<BoundConstants>& constants,
                                                     Execution exec,
                                                     const std::vector<const Trajectory*>* truths) {
  if (constants.size() != mus.size()) throw ConfigError("one constants record per parameter needed");
  if (truths && truths->size() != mus.size()) throw ConfigError("one truth trajectory per parameter needed");
  const ReducedSystem reduced = project(*problem.model, problem.loads, rb);
  const ResidualEstimator estimator(*problem.model, problem.loads, rb);

  const auto n = static_cast<long>(mus.size());
  std::vector<ParameterEvaluation> out(mus.size());
  std::vector<std::exception_ptr> failures(mus.size());
  auto run = [&](long i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      out[k] = evaluate_one(problem, rb, reduced, estimator, constants[k], mus[k],
                            truths ? (*truths)[k] : nullptr);
    } catch (...) {
      failures[k] = std::current_exception();
    }
  };
  if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long i = 0; i < n; ++i) run(i);
  } else {
    for (long i = 0; i < n; ++i) run(i);
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return out;
}

const Trajectory& TruthCache::get(double mu) {
  auto it = cache_.find(mu);
  if (it != cache_.end()) return it->second;
  SolverSettings solver = problem_.solver;
  solver.record_every = 1;
  Eigen::VectorXd x0(problem_.p0.size() + problem_.u0.size());
  x0 << problem_.p0, problem_.u0;
  const TruthSystem system = truth_system(*problem_.model, problem_.loads);
  return cache_.emplace(mu, integrate(system, mu, x0, solver)).first->second;
}

GreedyState greedy_train(const ReductionProblem& problem, const std::vector<double>& training_set,
                         const std::vector<BoundConstants>& constants, const GreedySettings& s,
                         const RightInverse& right_inverse, const GreedyObserver& observer) {
  if (training_set.empty()) throw ConfigError("greedy training needs a nonempty training set");
  const TruthModel& m = *problem.model;
  const Eigen::VectorXd hq = m.mass_q().diagonal();

  GreedyState state;
  state.training_set = training_set;
  state.tolerance = s.tolerance;
  state.n_max = s.n_max;
  state.basis = kernel_only_basis(m, problem.kernel_flux);
  TruthCache truths(problem);

  for (int iter = 0;; ++iter) {
    const auto evals = evaluate_parameters(problem, state.basis, training_set, constants, s.execution);
    std::size_t worst = 0;
    auto indicator = [&](const ParameterEvaluation& e) {
      return s.indicator == Indicator::Delta ? e.max_delta : e.max_delta_tilde;
    };
    for (std::size_t i = 1; i < evals.size(); ++i) {
      if (indicator(evals[i]) > indicator(evals[worst])) worst = i;
    }
    GreedyRecord rec;
    rec.iteration = iter;
    rec.mu = training_set[worst];
    rec.indicator = indicator(evals[worst]);
    rec.dim_q = state.basis.dim_q();
    rec.dim_v = state.basis.dim_v();
    rec.N = state.basis.dim();
    state.history.push_back(rec);
    if (observer) observer(state.basis, rec);

    if (rec.indicator <= s.tolerance) {
      state.converged = true;
      state.stop_reason = "tolerance reached";
      break;
    }
    const Eigen::Index room = (s.n_max - rec.N) / 2;
    if (room <= 0) {
      state.stop_reason = "maximum basis size reached";
      break;
    }
    const auto& h = state.history;
    if (h.size() >= 4) {
      bool stalled = true;
      for (std::size_t k = h.size() - 3; k < h.size(); ++k) {
        stalled = stalled && h[k].indicator >= h[k - 1].indicator && h[k].mu == h[k - 1].mu;
      }
      if (stalled) {
        state.stop_reason = "stagnation";
        throw GreedyStagnation("greedy indicator did not decrease for 3 iterations at mu = " +
                                   std::to_string(rec.mu),
                               state);
      }
    }

    const Trajectory& truth = truths.get(rec.mu);
    const Eigen::MatrixXd snapshots = joint_snapshots(m, {&truth});
    const double total_energy = (hq.cwiseSqrt().asDiagonal() * snapshots).squaredNorm();
    const Eigen::MatrixXd deflated = deflate(snapshots, state.basis.q_basis, hq);
    PcaSettings pca = s.pca;
    pca.max_modes = static_cast<int>(std::min<Eigen::Index>(pca.max_modes, room));
    const Eigen::MatrixXd modes = pca_modes(m, deflated, pca, 1e-14 * total_energy);
    if (modes.cols() == 0) {
      state.stop_reason = "snapshots exhausted";
      break;
    }
    const ReducedBasis next = enrich(m, state.basis, modes, right_inverse);
    if (next.dim() == state.basis.dim()) {
      state.stop_reason = "snapshots exhausted";
      break;
    }
    state.basis = next;
  }
  return state;
}

}  // namespace netrb
