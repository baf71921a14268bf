#include "netrb/network.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>

#include "netrb/error.hpp"

namespace netrb {

std::size_t NetworkGraph::node_index(const std::string& id) const {
  auto it = node_lookup_.find(id);
  if (it == node_lookup_.end()) throw ConfigError("unknown node '" + id + "'");
  return it->second;
}

std::size_t NetworkGraph::edge_index(const std::string& id) const {
  auto it = edge_lookup_.find(id);
  if (it == edge_lookup_.end()) throw ConfigError("unknown edge '" + id + "'");
  return it->second;
}

std::string NetworkGraph::canonical_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "nodes:";
  for (const auto& n : nodes_) os << n << ';';
  os << "edges:";
  for (const auto& e : edges_) os << e.id << ',' << e.tail << ',' << e.head << ',' << e.length << ';';
  return os.str();
}

namespace {

void check_declaration(const NetworkGraph& g, const std::vector<std::string>& declared,
                       bool boundary) {
  std::set<std::string> expected;
  for (std::size_t v : boundary ? g.boundary_nodes() : g.interior_nodes()) {
    expected.insert(g.nodes()[v]);
  }
  const std::set<std::string> given(declared.begin(), declared.end());
  if (given != expected) {
    throw ConfigError(std::string("declared ") + (boundary ? "boundary" : "interior") +
                      " nodes do not match the classification derived from incidence");
  }
}

}  // namespace

NetworkGraph build_graph(const TopologySpec& spec) {
  NetworkGraph g;
  if (spec.nodes.empty()) throw ConfigError("network has no nodes");
  if (spec.edges.empty()) throw ConfigError("network has no edges");

  g.nodes_ = spec.nodes;
  for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
    if (!g.node_lookup_.emplace(g.nodes_[i], i).second) {
      throw ConfigError("duplicate node id '" + g.nodes_[i] + "'");
    }
  }

  g.outgoing_.resize(g.nodes_.size());
  g.incoming_.resize(g.nodes_.size());
  for (std::size_t k = 0; k < spec.edges.size(); ++k) {
    const Edge& e = spec.edges[k];
    if (!g.edge_lookup_.emplace(e.id, k).second) {
      throw ConfigError("duplicate edge id '" + e.id + "'");
    }
    if (!(e.length > 0.0) || !std::isfinite(e.length)) {
      throw ConfigError("edge '" + e.id + "' has nonpositive length");
    }
    if (e.tail == e.head) throw ConfigError("edge '" + e.id + "' is a self-loop");
    auto tail = g.node_lookup_.find(e.tail);
    auto head = g.node_lookup_.find(e.head);
    if (tail == g.node_lookup_.end() || head == g.node_lookup_.end()) {
      throw ConfigError("edge '" + e.id + "' references an undeclared node");
    }
    g.edges_.push_back(e);
    g.tails_.push_back(tail->second);
    g.heads_.push_back(head->second);
    g.outgoing_[tail->second].push_back(k);
    g.incoming_[head->second].push_back(k);
  }

  // Connectivity over the undirected skeleton.
  std::vector<bool> seen(g.nodes_.size(), false);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    const std::size_t v = frontier.front();
    frontier.pop();
    auto visit = [&](std::size_t w) {
      if (!seen[w]) {
        seen[w] = true;
        ++reached;
        frontier.push(w);
      }
    };
    for (std::size_t e : g.outgoing_[v]) visit(g.heads_[e]);
    for (std::size_t e : g.incoming_[v]) visit(g.tails_[e]);
  }
  if (reached != g.nodes_.size()) throw ConfigError("network is not connected");

  for (std::size_t v = 0; v < g.nodes_.size(); ++v) {
    (g.degree(v) == 1 ? g.boundary_ : g.interior_).push_back(v);
  }

  if (spec.declared_boundary) check_declaration(g, *spec.declared_boundary, true);
  if (spec.declared_interior) check_declaration(g, *spec.declared_interior, false);
  return g;
}

Eigen::MatrixXd interior_balance_matrix(const NetworkGraph& g) {
  const auto& interior = g.interior_nodes();
  Eigen::MatrixXd balance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(interior.size()),
                                                  static_cast<Eigen::Index>(g.edge_count()));
  for (std::size_t r = 0; r < interior.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    for (std::size_t e : g.incoming(interior[r])) balance(row, static_cast<Eigen::Index>(e)) += 1.0;
    for (std::size_t e : g.outgoing(interior[r])) balance(row, static_cast<Eigen::Index>(e)) -= 1.0;
  }
  return balance;
}

KernelBasis kernel_space(const NetworkGraph& g) {
  const auto n_edges = static_cast<Eigen::Index>(g.edge_count());
  const Eigen::MatrixXd balance = interior_balance_matrix(g);
  if (balance.rows() == 0) return {Eigen::MatrixXd::Identity(n_edges, n_edges)};

  // Right singular vectors beyond the numerical rank span the null space.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(balance, Eigen::ComputeFullV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const double tol = 1e-10 * (sigma.size() > 0 ? sigma(0) : 0.0);
  Eigen::Index rank = 0;
  while (rank < sigma.size() && sigma(rank) > tol) ++rank;
  return {svd.matrixV().rightCols(n_edges - rank)};
}

}  // namespace netrb
