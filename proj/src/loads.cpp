#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "netrb/error.hpp"
#include "netrb/truth_fem.hpp"

namespace netrb {

namespace {

// Five-point Gauss-Legendre rule on [0, 1].
constexpr double kG1 = 0.5384693101056830910363144;
constexpr double kG2 = 0.9061798459386639927976269;
constexpr std::array<double, 5> kGaussNodes{0.5 * (1.0 - kG2), 0.5 * (1.0 - kG1), 0.5,
                                            0.5 * (1.0 + kG1), 0.5 * (1.0 + kG2)};
constexpr std::array<double, 5> kGaussWeights{
    0.5 * 0.2369268850561890875142640, 0.5 * 0.4786286704993664680412915, 0.5 * 128.0 / 225.0,
    0.5 * 0.4786286704993664680412915, 0.5 * 0.2369268850561890875142640};

// Integrals of f against psi (P0 indicator) on every cell.
Eigen::VectorXd cell_integrals(const TruthModel& m, const EdgeFunction& f,
                               const std::vector<bool>& active) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.n_p());
  for (std::size_t e = 0; e < m.graph().edge_count(); ++e) {
    if (!active[e]) continue;
    const double h = m.cell_width(e);
    for (int c = 0; c < m.cells_per_edge(); ++c) {
      double sum = 0.0;
      for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
        sum += kGaussWeights[q] * f(e, (c + kGaussNodes[q]) * h);
      }
      out(m.cell_index(e, c)) = sum * h;
    }
  }
  return out;
}

// Integrals of f against the constrained P1 basis.
Eigen::VectorXd flux_integrals(const TruthModel& m, const EdgeFunction& f,
                               const std::vector<bool>& active) {
  Eigen::VectorXd broken = Eigen::VectorXd::Zero(m.n_broken());
  for (std::size_t e = 0; e < m.graph().edge_count(); ++e) {
    if (!active[e]) continue;
    const double h = m.cell_width(e);
    for (int c = 0; c < m.cells_per_edge(); ++c) {
      double left = 0.0, right = 0.0;
      for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
        const double s = kGaussNodes[q];
        const double w = kGaussWeights[q] * f(e, (c + s) * h);
        left += w * (1.0 - s);
        right += w * s;
      }
      broken(m.broken_index(e, c)) += left * h;
      broken(m.broken_index(e, c + 1)) += right * h;
    }
  }
  return m.flux_expansion().transpose() * broken;
}

std::vector<bool> active_edges(const NetworkGraph& g, const std::vector<std::string>& edges) {
  std::vector<bool> active(g.edge_count(), edges.empty());
  for (const auto& id : edges) active[g.edge_index(id)] = true;
  return active;
}

}  // namespace

TimeSeries::TimeSeries(std::vector<double> times, std::vector<double> values)
    : times_(std::move(times)), values_(std::move(values)) {
  if (times_.empty() || times_.size() != values_.size()) {
    throw ConfigError("time series needs matching, nonempty time and value lists");
  }
  if (!std::is_sorted(times_.begin(), times_.end()) ||
      std::adjacent_find(times_.begin(), times_.end()) != times_.end()) {
    throw ConfigError("time series sample times must be strictly increasing");
  }
}

double TimeSeries::operator()(double t) const {
  if (t <= times_.front()) return values_.front();
  if (t >= times_.back()) return values_.back();
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - times_[lo]) / (times_[hi] - times_[lo]);
  return (1.0 - w) * values_[lo] + w * values_[hi];
}

TimeFunction::TimeFunction(Expression e) : impl_(std::move(e)) {
  if (std::get<Expression>(impl_).depends_on_x()) {
    throw ConfigError("time function '" + std::get<Expression>(impl_).text() +
                      "' must not depend on x");
  }
}

double TimeFunction::operator()(double t) const {
  return std::visit([t](const auto& f) { return f(t); }, impl_);
}

Eigen::VectorXd LoadTerms::pressure_amplitude(double t) const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(pressure_amplitudes.size()));
  for (std::size_t k = 0; k < pressure_amplitudes.size(); ++k) {
    theta(static_cast<Eigen::Index>(k)) = pressure_amplitudes[k](t);
  }
  return theta;
}

Eigen::VectorXd LoadTerms::flux_amplitude(double t) const {
  Eigen::VectorXd theta(static_cast<Eigen::Index>(flux_amplitudes.size()));
  for (std::size_t k = 0; k < flux_amplitudes.size(); ++k) {
    theta(static_cast<Eigen::Index>(k)) = flux_amplitudes[k](t);
  }
  return theta;
}

LoadTerms assemble_loads(const TruthModel& m, const SourceAndBoundaryData& data) {
  const NetworkGraph& g = m.graph();
  LoadTerms loads;
  std::vector<Eigen::VectorXd> p_cols, u_cols;

  auto profile_of = [](const SourceTerm& s) {
    if (s.profile.depends_on_t()) {
      throw ConfigError("source profile '" + s.profile.text() + "' must depend on x only");
    }
    return [&s](std::size_t, double x) { return s.profile(0.0, x); };
  };

  for (const SourceTerm& s : data.f) {
    p_cols.push_back(cell_integrals(m, profile_of(s), active_edges(g, s.edges)));
    loads.pressure_amplitudes.push_back(s.amplitude);
  }
  for (const SourceTerm& s : data.g) {
    u_cols.push_back(flux_integrals(m, profile_of(s), active_edges(g, s.edges)));
    loads.flux_amplitudes.push_back(s.amplitude);
  }

  std::set<std::string> known;
  const auto& boundary = g.boundary_nodes();
  for (std::size_t k = 0; k < boundary.size(); ++k) {
    const std::string& id = g.nodes()[boundary[k]];
    known.insert(id);
    auto it = data.boundary_pressure.find(id);
    if (it == data.boundary_pressure.end()) continue;
    u_cols.emplace_back(m.boundary_load().col(static_cast<Eigen::Index>(k)));
    loads.flux_amplitudes.push_back(it->second);
  }
  for (const auto& [id, fn] : data.boundary_pressure) {
    if (!known.count(id)) throw ConfigError("boundary pressure given for non-boundary node '" + id + "'");
  }

  loads.pressure_vectors.resize(m.n_p(), static_cast<Eigen::Index>(p_cols.size()));
  for (std::size_t k = 0; k < p_cols.size(); ++k) loads.pressure_vectors.col(static_cast<Eigen::Index>(k)) = p_cols[k];
  loads.flux_vectors.resize(m.n_u(), static_cast<Eigen::Index>(u_cols.size()));
  for (std::size_t k = 0; k < u_cols.size(); ++k) loads.flux_vectors.col(static_cast<Eigen::Index>(k)) = u_cols[k];
  return loads;
}

StateVector apply_operator(const TruthModel& m, double mu, const StateVector& state, double t,
                           const LoadTerms& loads) {
  StateVector out;
  out.p = loads.pressure_load(t) - m.divergence() * state.u;
  out.u = m.divergence().transpose() * state.p - mu * (m.damping() * state.u) + loads.flux_load(t);
  return out;
}

StateVector apply_operator(const TruthModel& m, double mu, const StateVector& state, double t,
                           const SourceAndBoundaryData& data) {
  return apply_operator(m, mu, state, t, assemble_loads(m, data));
}

Eigen::VectorXd l2_projection(const TruthModel& m, TargetSpace space, const EdgeFunction& f) {
  const std::vector<bool> all(m.graph().edge_count(), true);
  if (space == TargetSpace::Q) {
    return cell_integrals(m, f, all).cwiseQuotient(m.mass_q().diagonal());
  }
  return m.solve_mass_v(flux_integrals(m, f, all));
}

}  // namespace netrb
