#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace netrb {

/// Directed pipe. The orientation fixes the local coordinate x in [0, length]:
/// x = 0 sits at `tail`, x = length at `head`.
struct Edge {
  std::string id;
  std::string tail;
  std::string head;
  double length = 1.0;
};

/// User-level topology description, as read from a topology file.
struct TopologySpec {
  std::vector<std::string> nodes;
  std::vector<Edge> edges;
  /// Optional declarations; when present they must agree with the
  /// classification derived from incidence.
  std::optional<std::vector<std::string>> declared_boundary;
  std::optional<std::vector<std::string>> declared_interior;
};

/// Validated directed network. Nodes incident to exactly one edge are
/// boundary nodes, all others are junctions (interior nodes).
class NetworkGraph {
 public:
  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  /// Node indices, in node declaration order.
  const std::vector<std::size_t>& boundary_nodes() const { return boundary_; }
  const std::vector<std::size_t>& interior_nodes() const { return interior_; }
  bool is_boundary(std::size_t node) const { return degree(node) == 1; }

  std::size_t node_index(const std::string& id) const;
  std::size_t edge_index(const std::string& id) const;
  std::size_t tail_index(std::size_t edge) const { return tails_[edge]; }
  std::size_t head_index(std::size_t edge) const { return heads_[edge]; }

  /// delta_v^+: edges leaving the node (the node is their x = 0 end).
  const std::vector<std::size_t>& outgoing(std::size_t node) const { return outgoing_[node]; }
  /// delta_v^-: edges entering the node (the node is their x = length end).
  const std::vector<std::size_t>& incoming(std::size_t node) const { return incoming_[node]; }
  std::size_t degree(std::size_t node) const {
    return outgoing_[node].size() + incoming_[node].size();
  }

  /// Stable textual form used for content hashing.
  std::string canonical_string() const;

 private:
  friend NetworkGraph build_graph(const TopologySpec& spec);

  std::vector<std::string> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> tails_, heads_;
  std::vector<std::vector<std::size_t>> outgoing_, incoming_;
  std::vector<std::size_t> boundary_, interior_;
  std::unordered_map<std::string, std::size_t> node_lookup_, edge_lookup_;
};

/// Validates the topology and classifies nodes. Throws ConfigError on
/// self-loops, nonpositive lengths, duplicate ids, unknown nodes,
/// disconnected graphs, or classification declarations that contradict
/// incidence. Parallel edges are accepted.
NetworkGraph build_graph(const TopologySpec& spec);

/// Flux balance at junctions: one row per interior node, one column per
/// edge; +1 for edges entering the node, -1 for edges leaving it.
Eigen::MatrixXd interior_balance_matrix(const NetworkGraph& g);

/// Orthonormal (Euclidean) basis of edgewise constant fluxes that satisfy
/// the flux balance at every junction.
struct KernelBasis {
  Eigen::MatrixXd vectors;  // edge_count x dim
  Eigen::Index dim() const { return vectors.cols(); }
};

KernelBasis kernel_space(const NetworkGraph& g);

}  // namespace netrb
