#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latsa {

/// Dense node index in [0, |V|). Id order is not assumed to be topological.
using NodeId = std::size_t;

inline constexpr const char* kStartToken = "<s>";
inline constexpr const char* kEndToken = "</s>";

/// Transition probabilities are accepted if each node's out-sum is within this
/// distance of 1; sums off by more than kRenormTolerance are renormalized.
inline constexpr double kNormTolerance = 1e-6;
inline constexpr double kRenormTolerance = 1e-9;

class LatticeError : public std::runtime_error {
public:
  enum class Kind {
    syntax,
    empty,
    bad_node,
    bad_probability,
    duplicate_edge,
    cycle,
    multiple_starts,
    multiple_ends,
    unnormalized,
    unreachable,
  };

  LatticeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

const char* to_string(LatticeError::Kind kind);

struct Edge {
  NodeId from = 0;
  NodeId to = 0;
  double p = 1.0;
};

struct Arc {
  NodeId node = 0;
  double p = 1.0;
};

/// Node-labeled DAG with a unique start and end node and per-edge transition
/// probabilities. Immutable once constructed; every constructor validates.
class Lattice {
public:
  /// Start and end are inferred as the unique source and sink.
  Lattice(std::vector<std::string> tokens, std::vector<Edge> edges);

  /// Start and end are given explicitly and must be the unique source and sink.
  Lattice(std::vector<std::string> tokens, std::vector<Edge> edges, NodeId start, NodeId end);

  std::size_t size() const { return tokens_.size(); }
  NodeId start() const { return start_; }
  NodeId end() const { return end_; }

  const std::string& token(NodeId k) const { return tokens_.at(k); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Edges sorted by (from, to).
  const std::vector<Edge>& edges() const { return edges_; }

  std::span<const Arc> out_arcs(NodeId k) const { return out_.at(k); }
  std::span<const Arc> in_arcs(NodeId k) const { return in_.at(k); }

  /// Kahn order with ties broken by ascending id.
  const std::vector<NodeId>& topological_order() const { return topo_; }

private:
  void build(bool explicit_endpoints, NodeId start, NodeId end);

  std::vector<std::string> tokens_;
  std::vector<Edge> edges_;
  std::vector<std::vector<Arc>> out_;
  std::vector<std::vector<Arc>> in_;
  std::vector<NodeId> topo_;
  NodeId start_ = 0;
  NodeId end_ = 0;
};

struct LabeledEdge {
  NodeId from = 0;
  NodeId to = 0;
  std::string token;
  double p = 1.0;
};

/// Edge-labeled lattice, the shape PLF input arrives in. Only used as an
/// ingestion format; convert with line_graph().
class EdgeLabeledLattice {
public:
  EdgeLabeledLattice(std::size_t num_nodes, std::vector<LabeledEdge> edges);

  std::size_t num_nodes() const { return num_nodes_; }
  const std::vector<LabeledEdge>& edges() const { return edges_; }
  NodeId start() const { return start_; }
  NodeId end() const { return end_; }

private:
  std::size_t num_nodes_;
  std::vector<LabeledEdge> edges_;
  NodeId start_ = 0;
  NodeId end_ = 0;
};

using PositionVector = std::vector<std::size_t>;

std::vector<NodeId> topological_order(const Lattice& l);

std::vector<NodeId> neighbors_out(const Lattice& l, NodeId k);
std::vector<NodeId> neighbors_in(const Lattice& l, NodeId k);

/// Transitive closure of out-edges (excluding k itself), ascending ids.
std::vector<NodeId> successors(const Lattice& l, NodeId k);
std::vector<NodeId> predecessors(const Lattice& l, NodeId k);

/// Transposed lattice. Reversed transition probabilities are
/// p_rev(j -> k) = marginal(k) * p(k -> j) / marginal(j), which keeps every
/// complete path's probability unchanged.
Lattice reverse(const Lattice& l);

/// One node per original edge plus fresh <s>/</s> endpoints. Complete-path
/// token sequences and their probabilities are preserved.
Lattice line_graph(const EdgeLabeledLattice& e);

/// Longest-path distance (in edges) from start, by DP over topological order.
PositionVector longest_path_positions(const Lattice& l);

/// Index of each node within topological_order().
PositionVector topological_positions(const Lattice& l);

std::vector<std::pair<std::string, NodeId>> linearize(const Lattice& l);

/// Chain <s> t_1 ... t_n </s> with all transition probabilities 1.
Lattice from_sequence(const std::vector<std::string>& tokens);

/// Renumbers nodes: node k of `l` becomes node perm[k] of the result.
Lattice relabel(const Lattice& l, std::span<const NodeId> perm);

/// Highest-probability complete path by Viterbi over topological order.
std::vector<NodeId> viterbi_best_path(const Lattice& l);

/// Tokens along a node path, with the start/end sentinels dropped if present.
std::vector<std::string> path_tokens(const Lattice& l, std::span<const NodeId> path);

}  // namespace latsa
