#include "latsa/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <tuple>

#include "latsa/masks.hpp"

namespace latsa {
namespace {

std::string node_name(const std::vector<std::string>& tokens, NodeId k) {
  std::ostringstream os;
  os << k;
  if (k < tokens.size()) os << " ('" << tokens[k] << "')";
  return os.str();
}

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Kahn's algorithm; returns fewer than n ids when the graph has a cycle.
std::vector<NodeId> kahn(std::size_t n, const std::vector<std::vector<Arc>>& out,
                         const std::vector<std::vector<Arc>>& in) {
  std::vector<std::size_t> indeg(n);
  for (std::size_t k = 0; k < n; ++k) indeg[k] = in[k].size();
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
  for (NodeId k = 0; k < n; ++k)
    if (indeg[k] == 0) ready.push(k);
  std::vector<NodeId> order;
  order.reserve(n);
  while (!ready.empty()) {
    const NodeId k = ready.top();
    ready.pop();
    order.push_back(k);
    for (const Arc& a : out[k])
      if (--indeg[a.node] == 0) ready.push(a.node);
  }
  return order;
}

void check_probability(double p, const std::string& where) {
  if (!(p > 0.0 && p <= 1.0))
    throw LatticeError(LatticeError::Kind::bad_probability,
                       "transition probability " + short_double(p) + " on " + where + " is outside (0, 1]");
}

}  // namespace

const char* to_string(LatticeError::Kind kind) {
  switch (kind) {
    case LatticeError::Kind::syntax: return "syntax";
    case LatticeError::Kind::empty: return "empty";
    case LatticeError::Kind::bad_node: return "bad_node";
    case LatticeError::Kind::bad_probability: return "bad_probability";
    case LatticeError::Kind::duplicate_edge: return "duplicate_edge";
    case LatticeError::Kind::cycle: return "cycle";
    case LatticeError::Kind::multiple_starts: return "multiple_starts";
    case LatticeError::Kind::multiple_ends: return "multiple_ends";
    case LatticeError::Kind::unnormalized: return "unnormalized";
    case LatticeError::Kind::unreachable: return "unreachable";
  }
  return "unknown";
}

Lattice::Lattice(std::vector<std::string> tokens, std::vector<Edge> edges)
    : tokens_(std::move(tokens)), edges_(std::move(edges)) {
  build(false, 0, 0);
}

Lattice::Lattice(std::vector<std::string> tokens, std::vector<Edge> edges, NodeId start, NodeId end)
    : tokens_(std::move(tokens)), edges_(std::move(edges)) {
  build(true, start, end);
}

void Lattice::build(bool explicit_endpoints, NodeId start, NodeId end) {
  using K = LatticeError::Kind;
  const std::size_t n = tokens_.size();
  if (n == 0) throw LatticeError(K::empty, "lattice has no nodes");

  for (const Edge& e : edges_) {
    if (e.from >= n || e.to >= n)
      throw LatticeError(K::bad_node, "edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                                          " references a node outside [0, " + std::to_string(n) + ")");
    if (e.from == e.to) throw LatticeError(K::cycle, "self-loop at node " + node_name(tokens_, e.from) + " forms a cycle");
    check_probability(e.p, "edge " + std::to_string(e.from) + "->" + std::to_string(e.to));
  }
  std::sort(edges_.begin(), edges_.end(),
            [](const Edge& a, const Edge& b) { return std::tie(a.from, a.to) < std::tie(b.from, b.to); });
  for (std::size_t i = 1; i < edges_.size(); ++i) {
    if (edges_[i].from == edges_[i - 1].from && edges_[i].to == edges_[i - 1].to)
      throw LatticeError(K::duplicate_edge, "duplicate edge " + std::to_string(edges_[i].from) + "->" +
                                                std::to_string(edges_[i].to));
  }

  out_.assign(n, {});
  in_.assign(n, {});
  for (const Edge& e : edges_) {
    out_[e.from].push_back({e.to, e.p});
    in_[e.to].push_back({e.from, e.p});
  }

  topo_ = kahn(n, out_, in_);
  if (topo_.size() != n) throw LatticeError(K::cycle, "lattice contains a cycle");

  std::vector<NodeId> sources, sinks;
  for (NodeId k = 0; k < n; ++k) {
    if (in_[k].empty()) sources.push_back(k);
    if (out_[k].empty()) sinks.push_back(k);
  }
  if (sources.size() != 1)
    throw LatticeError(K::multiple_starts, std::to_string(sources.size()) + " nodes have no incoming edges; exactly one start node is required");
  if (sinks.size() != 1)
    throw LatticeError(K::multiple_ends, std::to_string(sinks.size()) + " nodes have no outgoing edges; exactly one end node is required");
  if (explicit_endpoints) {
    if (start >= n || end >= n) throw LatticeError(K::bad_node, "start/end node id out of range");
    if (start != sources.front())
      throw LatticeError(K::multiple_starts, "declared start " + node_name(tokens_, start) +
                                                 " is not the unique source " + node_name(tokens_, sources.front()));
    if (end != sinks.front())
      throw LatticeError(K::multiple_ends, "declared end " + node_name(tokens_, end) +
                                               " is not the unique sink " + node_name(tokens_, sinks.front()));
  }
  start_ = sources.front();
  end_ = sinks.front();

  // With one source, one sink and no cycle every node lies on a complete path;
  // checked anyway so the invariant is enforced locally.
  std::vector<char> seen(n, 0);
  for (NodeId k : topo_) {
    if (k == start_) seen[k] = 1;
    if (!seen[k]) throw LatticeError(K::unreachable, "node " + node_name(tokens_, k) + " is unreachable from the start node");
    for (const Arc& a : out_[k]) seen[a.node] = 1;
  }

  bool renormalized = false;
  for (NodeId k = 0; k < n; ++k) {
    if (k == end_) continue;
    double sum = 0.0;
    for (const Arc& a : out_[k]) sum += a.p;
    if (std::abs(sum - 1.0) > kNormTolerance)
      throw LatticeError(K::unnormalized,
                         "transition probabilities at node " + node_name(tokens_, k) + " sum to " + short_double(sum));
    if (std::abs(sum - 1.0) > kRenormTolerance) {
      for (Arc& a : out_[k]) a.p /= sum;
      renormalized = true;
    }
  }
  if (renormalized) {
    for (Edge& e : edges_) {
      for (const Arc& a : out_[e.from])
        if (a.node == e.to) e.p = a.p;
    }
    for (auto& arcs : in_) arcs.clear();
    for (const Edge& e : edges_) in_[e.to].push_back({e.from, e.p});
  }
}

EdgeLabeledLattice::EdgeLabeledLattice(std::size_t num_nodes, std::vector<LabeledEdge> edges)
    : num_nodes_(num_nodes), edges_(std::move(edges)) {
  using K = LatticeError::Kind;
  if (num_nodes_ < 2) throw LatticeError(K::empty, "edge-labeled lattice needs at least two nodes");
  if (edges_.empty()) throw LatticeError(K::empty, "edge-labeled lattice has no edges");
  // Validate the topology through a node-labeled view of the same graph.
  // Parallel edges with different tokens are legal here and merge in the view.
  std::map<std::pair<NodeId, NodeId>, double> merged;
  for (const LabeledEdge& e : edges_) {
    check_probability(e.p, "edge '" + e.token + "' " + std::to_string(e.from) + "->" + std::to_string(e.to));
    merged[{e.from, e.to}] += e.p;
  }
  std::vector<Edge> plain;
  plain.reserve(merged.size());
  for (const auto& [key, p] : merged) plain.push_back({key.first, key.second, std::min(p, 1.0)});
  Lattice view(std::vector<std::string>(num_nodes_), std::move(plain));
  start_ = view.start();
  end_ = view.end();
}

std::vector<NodeId> topological_order(const Lattice& l) { return l.topological_order(); }

std::vector<NodeId> neighbors_out(const Lattice& l, NodeId k) {
  std::vector<NodeId> r;
  for (const Arc& a : l.out_arcs(k)) r.push_back(a.node);
  return r;
}

std::vector<NodeId> neighbors_in(const Lattice& l, NodeId k) {
  std::vector<NodeId> r;
  for (const Arc& a : l.in_arcs(k)) r.push_back(a.node);
  return r;
}

namespace {

std::vector<NodeId> closure(const Lattice& l, NodeId k, bool forward) {
  std::vector<char> seen(l.size(), 0);
  std::vector<NodeId> stack{k};
  while (!stack.empty()) {
    const NodeId u = stack.back();
    stack.pop_back();
    for (const Arc& a : forward ? l.out_arcs(u) : l.in_arcs(u)) {
      if (!seen[a.node]) {
        seen[a.node] = 1;
        stack.push_back(a.node);
      }
    }
  }
  std::vector<NodeId> r;
  for (NodeId j = 0; j < l.size(); ++j)
    if (seen[j]) r.push_back(j);
  return r;
}

}  // namespace

std::vector<NodeId> successors(const Lattice& l, NodeId k) { return closure(l, k, true); }
std::vector<NodeId> predecessors(const Lattice& l, NodeId k) { return closure(l, k, false); }

Lattice reverse(const Lattice& l) {
  // Log-space flow, so tiny marginals do not underflow before the division.
  std::vector<double> lm(l.size(), -std::numeric_limits<double>::infinity());
  lm[l.start()] = 0.0;
  for (NodeId j : l.topological_order()) {
    if (j == l.start()) continue;
    double hi = -std::numeric_limits<double>::infinity();
    for (const Arc& a : l.in_arcs(j)) hi = std::max(hi, lm[a.node] + std::log(a.p));
    double s = 0.0;
    for (const Arc& a : l.in_arcs(j)) s += std::exp(lm[a.node] + std::log(a.p) - hi);
    lm[j] = hi + std::log(s);
  }
  std::vector<Edge> edges;
  edges.reserve(l.edges().size());
  for (const Edge& e : l.edges()) {
    double p = std::exp(lm[e.from] + std::log(e.p) - lm[e.to]);
    // Still below the smallest double: keep the edge with the least weight there is.
    if (p == 0.0) p = std::numeric_limits<double>::denorm_min();
    edges.push_back({e.to, e.from, std::min(p, 1.0)});
  }
  return Lattice(l.tokens(), std::move(edges), l.end(), l.start());
}

Lattice line_graph(const EdgeLabeledLattice& e) {
  const auto& edges = e.edges();
  const std::size_t m = edges.size();
  std::vector<double> out_sum(e.num_nodes(), 0.0);
  std::vector<std::vector<std::size_t>> leaving(e.num_nodes());
  for (std::size_t idx = 0; idx < m; ++idx) {
    out_sum[edges[idx].from] += edges[idx].p;
    leaving[edges[idx].from].push_back(idx);
  }
  // Already-normalized slots keep their probabilities bit for bit; dividing
  // by a sum that is 1 up to round-off would perturb the last ulp.
  for (double& s : out_sum)
    if (std::abs(s - 1.0) <= kRenormTolerance) s = 1.0;

  std::vector<std::string> tokens;
  tokens.reserve(m + 2);
  tokens.emplace_back(kStartToken);
  for (const LabeledEdge& le : edges) tokens.push_back(le.token);
  tokens.emplace_back(kEndToken);
  const NodeId start = 0;
  const NodeId end = m + 1;

  std::vector<Edge> out;
  for (std::size_t idx : leaving[e.start()]) out.push_back({start, idx + 1, edges[idx].p / out_sum[e.start()]});
  for (std::size_t idx = 0; idx < m; ++idx) {
    const NodeId head = edges[idx].to;
    if (head == e.end()) {
      out.push_back({idx + 1, end, 1.0});
      continue;
    }
    for (std::size_t nxt : leaving[head]) out.push_back({idx + 1, nxt + 1, edges[nxt].p / out_sum[head]});
  }
  return Lattice(std::move(tokens), std::move(out), start, end);
}

PositionVector longest_path_positions(const Lattice& l) {
  PositionVector pos(l.size(), 0);
  for (NodeId k : l.topological_order()) {
    for (const Arc& a : l.out_arcs(k)) pos[a.node] = std::max(pos[a.node], pos[k] + 1);
  }
  return pos;
}

PositionVector topological_positions(const Lattice& l) {
  PositionVector pos(l.size(), 0);
  const auto& order = l.topological_order();
  for (std::size_t r = 0; r < order.size(); ++r) pos[order[r]] = r;
  return pos;
}

std::vector<std::pair<std::string, NodeId>> linearize(const Lattice& l) {
  std::vector<std::pair<std::string, NodeId>> r;
  r.reserve(l.size());
  for (NodeId k : l.topological_order()) r.emplace_back(l.token(k), k);
  return r;
}

Lattice from_sequence(const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw LatticeError(LatticeError::Kind::empty, "cannot build a lattice from an empty sequence");
  std::vector<std::string> nodes;
  nodes.reserve(tokens.size() + 2);
  nodes.emplace_back(kStartToken);
  nodes.insert(nodes.end(), tokens.begin(), tokens.end());
  nodes.emplace_back(kEndToken);
  std::vector<Edge> edges;
  for (NodeId k = 0; k + 1 < nodes.size(); ++k) edges.push_back({k, k + 1, 1.0});
  return Lattice(std::move(nodes), std::move(edges));
}

Lattice relabel(const Lattice& l, std::span<const NodeId> perm) {
  if (perm.size() != l.size()) throw std::invalid_argument("relabel: permutation size mismatch");
  std::vector<std::string> tokens(l.size());
  for (NodeId k = 0; k < l.size(); ++k) tokens.at(perm[k]) = l.token(k);
  std::vector<Edge> edges;
  for (const Edge& e : l.edges()) edges.push_back({perm[e.from], perm[e.to], e.p});
  return Lattice(std::move(tokens), std::move(edges), perm[l.start()], perm[l.end()]);
}

std::vector<NodeId> viterbi_best_path(const Lattice& l) {
  const std::size_t n = l.size();
  std::vector<double> best(n, -1.0);
  std::vector<NodeId> back(n, l.start());
  best[l.start()] = 1.0;
  for (NodeId k : l.topological_order()) {
    for (const Arc& a : l.out_arcs(k)) {
      const double cand = best[k] * a.p;
      if (cand > best[a.node]) {
        best[a.node] = cand;
        back[a.node] = k;
      }
    }
  }
  std::vector<NodeId> path{l.end()};
  while (path.back() != l.start()) path.push_back(back[path.back()]);
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<std::string> path_tokens(const Lattice& l, std::span<const NodeId> path) {
  std::vector<std::string> r;
  for (NodeId k : path) {
    const std::string& t = l.token(k);
    if ((k == l.start() && t == kStartToken) || (k == l.end() && t == kEndToken)) continue;
    r.push_back(t);
  }
  return r;
}

}  // namespace latsa
