#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netrb/certification.hpp"
#include "netrb/reduced_basis.hpp"
#include "netrb/time_integration.hpp"
#include "netrb/truth_fem.hpp"

namespace netrb {

/// Maps Q coefficients q to flux coefficients v with d/dx v = q
/// (equivalently G v = M_Q q), column by column.
using RightInverse = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Minimum M_V-norm right inverse v = M_V^{-1} G^T (G M_V^{-1} G^T)^{-1} M_Q q.
class MinimumNormRightInverse {
 public:
  explicit MinimumNormRightInverse(const TruthModel& m);
  Eigen::MatrixXd operator()(const Eigen::MatrixXd& q) const;

 private:
  Eigen::VectorXd hq_;
  Eigen::MatrixXd mv_inv_gt_;  // n_u x n_p
  Eigen::LLT<Eigen::MatrixXd> schur_;
};

struct PcaSettings {
  double energy_cutoff = 1e-7;  // keep modes until 1 - cutoff of the energy is captured
  int max_modes = 10;
};

/// Columns [p_1 .. p_L, d/dx u_1 .. d/dx u_L] in Q coefficients.
Eigen::MatrixXd joint_snapshots(const TruthModel& m, const std::vector<const Trajectory*>& trajs);

/// M_Q-weighted principal components of the snapshot columns, returned as
/// M_Q-orthonormal Q coefficients ordered by captured energy. Eigenvalues
/// below `floor` (an absolute energy level) are discarded; when `floor` is
/// negative, 1e-14 times the largest eigenvalue is used.
Eigen::MatrixXd pca_modes(const TruthModel& m, const Eigen::MatrixXd& snapshots,
                          const PcaSettings& s, double floor = -1.0);

/// Basis spanning only the kernel space: Q_N = {0}, V_N = K.
ReducedBasis kernel_only_basis(const TruthModel& m, const Eigen::MatrixXd& kernel_flux);

/// Append pressure modes and their right-inverse images, re-orthonormalized
/// against the current basis (classical Gram-Schmidt, two passes).
ReducedBasis enrich(const TruthModel& m, const ReducedBasis& rb, const Eigen::MatrixXd& q_modes,
                    const RightInverse& right_inverse);

/// Q_N from the PCA of the joint snapshot set, V_N = K + right-inverse(Q_N).
ReducedBasis constrained_pca(const TruthModel& m, const Eigen::MatrixXd& kernel_flux,
                             const std::vector<const Trajectory*>& snapshots,
                             const PcaSettings& s, const RightInverse& right_inverse);

struct ReducedInitial {
  Eigen::VectorXd coefficients;  // [p_N; u_N]
  InitialError error;
};

/// L2 projections of truth initial data onto Q_N and V_N.
ReducedInitial project_initial(const TruthModel& m, const ReducedBasis& rb, const Eigen::VectorXd& p0,
                               const Eigen::VectorXd& u0);

enum class Indicator { Delta, DeltaTilde };
enum class Execution { Serial, Parallel };

/// Everything fixed across a parameter study.
struct ReductionProblem {
  std::shared_ptr<const TruthModel> model;
  LoadTerms loads;
  Eigen::VectorXd p0;
  Eigen::VectorXd u0;
  Eigen::MatrixXd kernel_flux;
  SolverSettings solver;
};

/// Reduced solve and certification at one parameter.
struct ParameterEvaluation {
  double mu = 0.0;
  CertifiedTrajectory certified;
  double max_delta = 0.0;
  double max_delta_tilde = 0.0;
};

ParameterEvaluation evaluate_parameter(const ReductionProblem& problem, const ReducedBasis& rb,
                                       const ResidualEstimator& estimator,
                                       const BoundConstants& constants, double mu,
                                       const Trajectory* truth = nullptr);

/// Indicator sweep over a parameter set. The parallel variant distributes
/// parameters over OpenMP threads; results are identical to the serial one.
std::vector<ParameterEvaluation> evaluate_parameters(const ReductionProblem& problem,
                                                     const ReducedBasis& rb,
                                                     const std::vector<double>& mus,
                                                     const std::vector<BoundConstants>& constants,
                                                     Execution exec,
                                                     const std::vector<const Trajectory*>* truths = nullptr);

struct GreedySettings {
  double tolerance = 1e-2;
  Eigen::Index n_max = 400;
  PcaSettings pca;
  Indicator indicator = Indicator::Delta;
  Execution execution = Execution::Parallel;
};

/// One row per evaluated basis: its size, the worst training indicator and
/// the parameter attaining it.
struct GreedyRecord {
  int iteration = 0;
  double mu = 0.0;
  double indicator = 0.0;
  Eigen::Index dim_q = 0;
  Eigen::Index dim_v = 0;
  Eigen::Index N = 0;
};

struct GreedyState {
  std::vector<double> training_set;
  ReducedBasis basis;
  std::vector<GreedyRecord> history;
  double tolerance = 0.0;
  Eigen::Index n_max = 0;
  bool converged = false;
  std::string stop_reason;
};

/// Raised when the indicator fails to decrease for three consecutive
/// iterations that all select the same parameter.
class GreedyStagnation : public std::runtime_error {
 public:
  GreedyStagnation(const std::string& what, GreedyState state)
      : std::runtime_error(what), state_(std::move(state)) {}
  const GreedyState& state() const { return state_; }

 private:
  GreedyState state_;
};

using GreedyObserver = std::function<void(const ReducedBasis&, const GreedyRecord&)>;

/// Bound-driven POD-greedy with compatibility-constrained enrichment;
/// starts from the kernel-only basis. `constants[i]` belongs to
/// `training_set[i]`. The observer sees every evaluated basis.
GreedyState greedy_train(const ReductionProblem& problem, const std::vector<double>& training_set,
                         const std::vector<BoundConstants>& constants, const GreedySettings& s,
                         const RightInverse& right_inverse, const GreedyObserver& observer = {});

/// Truth trajectory at mu, computed on first request.
class TruthCache {
 public:
  explicit TruthCache(const ReductionProblem& problem) : problem_(problem) {}
  const Trajectory& get(double mu);

 private:
  const ReductionProblem& problem_;
  std::map<double, Trajectory> cache_;
};

}  // namespace netrb
