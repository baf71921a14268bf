#include "netrb/truth_fem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "netrb/error.hpp"

namespace netrb {

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

SparseMatrix from_triplets(Eigen::Index rows, Eigen::Index cols, const Triplets& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

void check_coefficients(const EdgeCoefficients& c, Eigen::Index n_edges) {
  if (c.a.size() != n_edges || c.b.size() != n_edges || c.d_base.size() != n_edges) {
    throw ConfigError("coefficient vectors must have one entry per edge (" +
                      std::to_string(n_edges) + ")");
  }
  for (Eigen::Index e = 0; e < n_edges; ++e) {
    if (!(c.a(e) > 0.0) || !(c.b(e) > 0.0)) {
      throw ConfigError("coefficients a and b must be positive on every edge");
    }
    if (!(c.d_base(e) >= 0.0)) throw ConfigError("damping d_base must be nonnegative");
  }
}

}  // namespace

Eigen::VectorXd TruthModel::derivative(const Eigen::VectorXd& u) const {
  Eigen::VectorXd gu = divergence_ * u;
  return gu.cwiseQuotient(mass_q_.diagonal());
}

Eigen::MatrixXd TruthModel::derivative(const Eigen::MatrixXd& u) const {
  Eigen::MatrixXd gu = divergence_ * u;
  return mass_q_.diagonal().cwiseInverse().asDiagonal() * gu;
}

Eigen::MatrixXd TruthModel::kernel_flux(const KernelBasis& kernel) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_u_, kernel.dim());
  for (std::size_t e = 0; e < graph_->edge_count(); ++e) {
    for (int j = 0; j <= cells_per_edge_; ++j) {
      const Eigen::Index c = free_index_[static_cast<std::size_t>(broken_index(e, j))];
      if (c >= 0) out.row(c) = kernel.vectors.row(static_cast<Eigen::Index>(e));
    }
  }
  return out;
}

Eigen::MatrixXd TruthModel::solve_mass_v(const Eigen::MatrixXd& rhs) const {
  return mass_v_factor_->solve(rhs);
}

TruthModel assemble_truth(std::shared_ptr<const NetworkGraph> graph, const EdgeCoefficients& coeffs,
                          int cells_per_edge) {
  if (!graph) throw ConfigError("assemble_truth: null graph");
  if (cells_per_edge < 1) throw ConfigError("cells_per_edge must be at least 1");
  const NetworkGraph& g = *graph;
  check_coefficients(coeffs, static_cast<Eigen::Index>(g.edge_count()));

  TruthModel m;
  m.graph_ = graph;
  m.coefficients_ = coeffs;
  m.cells_per_edge_ = cells_per_edge;
  const int n = cells_per_edge;
  const Eigen::Index n_edges = static_cast<Eigen::Index>(g.edge_count());
  m.n_p_ = n_edges * n;
  const Eigen::Index n_broken = m.n_broken();

  // Eliminate one endpoint value per junction. Balance: sum_in u(l) - sum_out u(0) = 0.
  struct Endpoint {
    Eigen::Index broken;
    double sign;
  };
  std::vector<std::vector<Endpoint>> junction_endpoints;
  std::vector<bool> eliminated(static_cast<std::size_t>(n_broken), false);
  for (std::size_t v : g.interior_nodes()) {
    std::vector<std::pair<std::size_t, Endpoint>> incident;
    for (std::size_t e : g.incoming(v)) incident.push_back({e, {m.broken_index(e, n), 1.0}});
    for (std::size_t e : g.outgoing(v)) incident.push_back({e, {m.broken_index(e, 0), -1.0}});
    std::sort(incident.begin(), incident.end(),
              [](const auto& x, const auto& y) { return x.second.broken < y.second.broken; });
    std::vector<Endpoint> eps;
    for (const auto& [e, ep] : incident) eps.push_back(ep);
    eliminated[static_cast<std::size_t>(eps.front().broken)] = true;
    junction_endpoints.push_back(std::move(eps));
  }

  m.free_index_.assign(static_cast<std::size_t>(n_broken), -1);
  Eigen::Index n_free = 0;
  for (Eigen::Index b = 0; b < n_broken; ++b) {
    if (!eliminated[static_cast<std::size_t>(b)]) m.free_index_[static_cast<std::size_t>(b)] = n_free++;
  }
  m.n_u_ = n_free;

  Triplets t_expand;
  for (Eigen::Index b = 0; b < n_broken; ++b) {
    const Eigen::Index c = m.free_index_[static_cast<std::size_t>(b)];
    if (c >= 0) t_expand.emplace_back(b, c, 1.0);
  }
  for (const auto& eps : junction_endpoints) {
    const Endpoint& dep = eps.front();
    for (std::size_t k = 1; k < eps.size(); ++k) {
      t_expand.emplace_back(dep.broken, m.free_index_[static_cast<std::size_t>(eps[k].broken)],
                            -eps[k].sign / dep.sign);
    }
  }
  m.flux_expansion_ = from_triplets(n_broken, m.n_u_, t_expand);

  // Broken-space element matrices, exact on uniform cells.
  Triplets t_ma, t_mq, t_mb, t_mv, t_d, t_g;
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const double h = m.cell_width(e);
    const auto ei = static_cast<Eigen::Index>(e);
    for (int c = 0; c < n; ++c) {
      const Eigen::Index row = m.cell_index(e, c);
      t_ma.emplace_back(row, row, coeffs.a(ei) * h);
      t_mq.emplace_back(row, row, h);
      const Eigen::Index l = m.broken_index(e, c), r = m.broken_index(e, c + 1);
      t_g.emplace_back(row, l, -1.0);
      t_g.emplace_back(row, r, 1.0);
      const std::array<std::array<double, 2>, 2> local{{{h / 3.0, h / 6.0}, {h / 6.0, h / 3.0}}};
      const std::array<Eigen::Index, 2> dofs{l, r};
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          t_mv.emplace_back(dofs[i], dofs[j], local[i][j]);
          t_mb.emplace_back(dofs[i], dofs[j], coeffs.b(ei) * local[i][j]);
          if (coeffs.d_base(ei) != 0.0) {
            t_d.emplace_back(dofs[i], dofs[j], coeffs.d_base(ei) * local[i][j]);
          }
        }
      }
    }
  }
  const SparseMatrix& T = m.flux_expansion_;
  m.mass_a_ = from_triplets(m.n_p_, m.n_p_, t_ma);
  m.mass_q_ = from_triplets(m.n_p_, m.n_p_, t_mq);
  m.mass_v_ = SparseMatrix(T.transpose() * from_triplets(n_broken, n_broken, t_mv) * T);
  m.mass_b_ = SparseMatrix(T.transpose() * from_triplets(n_broken, n_broken, t_mb) * T);
  m.damping_ = SparseMatrix(T.transpose() * from_triplets(n_broken, n_broken, t_d) * T);
  m.divergence_ = SparseMatrix(from_triplets(m.n_p_, n_broken, t_g) * T);
  for (SparseMatrix* s : {&m.mass_v_, &m.mass_b_, &m.damping_, &m.divergence_}) {
    s->prune(0.0);
    s->makeCompressed();
  }

  Triplets t_bc;
  const auto& boundary = g.boundary_nodes();
  for (std::size_t k = 0; k < boundary.size(); ++k) {
    const std::size_t v = boundary[k];
    const auto col = static_cast<Eigen::Index>(k);
    if (!g.outgoing(v).empty()) {
      const Eigen::Index b = m.broken_index(g.outgoing(v).front(), 0);
      t_bc.emplace_back(m.free_index_[static_cast<std::size_t>(b)], col, 1.0);
    } else {
      const Eigen::Index b = m.broken_index(g.incoming(v).front(), n);
      t_bc.emplace_back(m.free_index_[static_cast<std::size_t>(b)], col, -1.0);
    }
  }
  m.boundary_load_ = from_triplets(m.n_u_, static_cast<Eigen::Index>(boundary.size()), t_bc);

  auto factor = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(m.mass_v_);
  if (factor->info() != Eigen::Success) throw NumericalError("flux mass matrix is not definite");
  m.mass_v_factor_ = std::move(factor);
  return m;
}

Eigen::VectorXd StateVector::stacked() const {
  Eigen::VectorXd x(p.size() + u.size());
  x << p, u;
  return x;
}

StateVector StateVector::split(const Eigen::VectorXd& x, Eigen::Index n_p) {
  return {x.head(n_p), x.tail(x.size() - n_p)};
}

}  // namespace netrb
