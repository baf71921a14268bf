#include "netrb/reduced_basis.hpp"

#include <algorithm>
#include <cmath>

#include "netrb/error.hpp"

namespace netrb {

ReducedBasis ReducedBasis::prefix(std::size_t enrichments) const {
  if (enrichments >= blocks.size()) throw ConfigError("basis prefix beyond the stored enrichments");
  const auto [nq, nv] = blocks[enrichments];
  ReducedBasis out;
  out.q_basis = q_basis.leftCols(nq);
  out.v_basis = v_basis.leftCols(nv);
  out.kernel_dim = kernel_dim;
  out.blocks.assign(blocks.begin(), blocks.begin() + static_cast<std::ptrdiff_t>(enrichments) + 1);
  return out;
}

ReducedSystem project(const TruthModel& m, const LoadTerms& loads, const ReducedBasis& rb) {
  const Eigen::MatrixXd& Q = rb.q_basis;
  const Eigen::MatrixXd& V = rb.v_basis;
  ReducedSystem s;
  s.mass_a = Q.transpose() * (m.mass_a() * Q);
  s.mass_b = V.transpose() * (m.mass_b() * V);
  s.damping = V.transpose() * (m.damping() * V);
  s.divergence = Q.transpose() * (m.divergence() * V);
  s.loads.pressure_vectors = Q.transpose() * loads.pressure_vectors;
  s.loads.flux_vectors = V.transpose() * loads.flux_vectors;
  s.loads.pressure_amplitudes = loads.pressure_amplitudes;
  s.loads.flux_amplitudes = loads.flux_amplitudes;
  // Exact symmetry of the mass blocks keeps the reduced energy well defined.
  s.mass_a = 0.5 * (s.mass_a + s.mass_a.transpose()).eval();
  s.mass_b = 0.5 * (s.mass_b + s.mass_b.transpose()).eval();
  s.damping = 0.5 * (s.damping + s.damping.transpose()).eval();
  return s;
}

Eigen::VectorXd lift(const ReducedBasis& rb, const Eigen::VectorXd& reduced) {
  Eigen::VectorXd x(rb.q_basis.rows() + rb.v_basis.rows());
  x.head(rb.q_basis.rows()) = rb.q_basis * reduced.head(rb.dim_q());
  x.tail(rb.v_basis.rows()) = rb.v_basis * reduced.tail(rb.dim_v());
  return x;
}

namespace {

double orthonormality_defect(const Eigen::MatrixXd& basis, const SparseMatrix& mass) {
  if (basis.cols() == 0) return 0.0;
  const Eigen::MatrixXd gram = basis.transpose() * (mass * basis);
  return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

}  // namespace

CompatibilityReport check_compatibility(const TruthModel& m, const Eigen::MatrixXd& kernel_flux,
                                        const ReducedBasis& rb) {
  CompatibilityReport r;
  const Eigen::MatrixXd& Q = rb.q_basis;
  const Eigen::MatrixXd& V = rb.v_basis;
  r.dim_q = Q.cols();
  r.q_orthonormality = orthonormality_defect(Q, m.mass_q());
  r.v_orthonormality = orthonormality_defect(V, m.mass_v());

  const Eigen::VectorXd hq = m.mass_q().diagonal();
  const Eigen::MatrixXd dv = m.derivative(V);
  const Eigen::MatrixXd coords = Q.transpose() * hq.asDiagonal() * dv;  // dim_q x dim_v
  for (Eigen::Index j = 0; j < V.cols(); ++j) {
    const Eigen::VectorXd d = dv.col(j);
    const Eigen::VectorXd rest = d - Q * coords.col(j);
    const double norm = std::sqrt(d.dot(hq.asDiagonal() * d));
    const double res = std::sqrt(std::max(0.0, rest.dot(hq.asDiagonal() * rest)));
    r.derivative_residual = std::max(r.derivative_residual, res / std::max(norm, 1.0));
  }
  if (coords.size() > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(coords);
    const Eigen::VectorXd& sigma = svd.singularValues();
    const double tol = 1e-10 * std::max(sigma(0), 1.0);
    r.derivative_rank = (sigma.array() > tol).count();
  }

  for (Eigen::Index j = 0; j < kernel_flux.cols(); ++j) {
    const Eigen::VectorXd k = kernel_flux.col(j);
    const Eigen::VectorXd mk = m.mass_v() * k;
    const Eigen::VectorXd rest = k - V * (V.transpose() * mk);
    const double res = std::sqrt(std::max(0.0, rest.dot(m.mass_v() * rest)));
    r.kernel_residual = std::max(r.kernel_residual, res / std::sqrt(k.dot(mk)));
  }
  return r;
}

}  // namespace netrb
