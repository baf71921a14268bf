#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netrb/network.hpp"
#include "netrb/truth_fem.hpp"

namespace netrb::testing {

inline TopologySpec diamond_spec() {
  TopologySpec s;
  s.nodes = {"v1", "j1", "j2", "j3", "j4", "v2"};
  s.edges = {{"e1", "v1", "j1", 1.0}, {"e2", "j1", "j2", 1.0}, {"e3", "j1", "j3", 1.0},
             {"e4", "j2", "j3", 1.0}, {"e5", "j2", "j4", 1.0}, {"e6", "j3", "j4", 1.0},
             {"e7", "j4", "v2", 1.0}};
  return s;
}

inline std::shared_ptr<const NetworkGraph> diamond_graph() {
  return std::make_shared<const NetworkGraph>(build_graph(diamond_spec()));
}

inline EdgeCoefficients diamond_coefficients() {
  EdgeCoefficients c;
  c.a.resize(7);
  c.b.resize(7);
  c.d_base.resize(7);
  c.a << 4, 4, 1, 1, 1, 4, 4;
  c.b << 0.25, 0.25, 1, 1, 1, 0.25, 0.25;
  c.d_base << 0.5, 0.5, 4, 4, 4, 0.5, 0.5;
  return c;
}

inline TruthModel diamond_model(int cells) {
  return assemble_truth(diamond_graph(), diamond_coefficients(), cells);
}

inline Eigen::MatrixXd kernel_flux_of(const TruthModel& m) {
  return m.kernel_flux(kernel_space(m.graph()));
}

inline std::shared_ptr<const NetworkGraph> single_edge_graph(double length = 1.0) {
  TopologySpec s;
  s.nodes = {"v1", "v2"};
  s.edges = {{"e1", "v1", "v2", length}};
  return std::make_shared<const NetworkGraph>(build_graph(s));
}

inline EdgeCoefficients uniform_coefficients(std::size_t edges, double a, double b, double d) {
  EdgeCoefficients c;
  c.a = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(edges), a);
  c.b = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(edges), b);
  c.d_base = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(edges), d);
  return c;
}

/// Diamond forcing used throughout: p^{v1}(t) = 1 - cos t, p^{v2} = 0.
inline SourceAndBoundaryData diamond_data() {
  SourceAndBoundaryData d;
  d.boundary_pressure["v1"] = TimeFunction(Expression::parse("1 - cos(t)"));
  d.boundary_pressure["v2"] = TimeFunction::constant(0.0);
  return d;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

inline double relative_difference(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

}  // namespace netrb::testing
