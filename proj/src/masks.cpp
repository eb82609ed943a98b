#include "latsa/masks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "latsa/kernels.hpp"

namespace latsa {

const char* to_string(MaskDirection d) {
  switch (d) {
    case MaskDirection::forward: return "fwd";
    case MaskDirection::backward: return "bwd";
    case MaskDirection::nondirectional: return "nondir";
  }
  return "?";
}

const char* to_string(MaskKind k) { return k == MaskKind::binary ? "bin" : "prob"; }

MaskMatrix::MaskMatrix(MaskDirection dir, MaskKind kind, std::size_t n, std::vector<double> values)
    : dir_(dir), kind_(kind), n_(n), m_(std::move(values)) {
  if (m_.size() != n_ * n_) throw std::invalid_argument("MaskMatrix: value count is not n*n");
}

MaskMatrix MaskMatrix::zeros(std::size_t n, MaskDirection dir, MaskKind kind) {
  return MaskMatrix(dir, kind, n, std::vector<double>(n * n, 0.0));
}

namespace {

MaskMatrix binary_from_reach(const std::vector<unsigned char>& reach, std::size_t n, MaskDirection dir) {
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = reach[i] ? 0.0 : kNegInf;
  return MaskMatrix(dir, MaskKind::binary, n, std::move(m));
}

MaskMatrix log_mask(std::vector<double> q, std::size_t n, MaskDirection dir) {
  // Sums of path weights can land an ulp above 1; a mask entry never exceeds 0.
  for (double& v : q) v = v > 0.0 ? std::min(0.0, std::log(v)) : kNegInf;
  for (std::size_t i = 0; i < n; ++i) q[i * n + i] = 0.0;
  return MaskMatrix(dir, MaskKind::probabilistic, n, std::move(q));
}

}  // namespace

MaskPair binary_masks(const Lattice& l) {
  const std::size_t n = l.size();
  std::vector<unsigned char> reach(n * n);
  kernels::parallel::reachability(l, reach);
  MaskMatrix fwd = binary_from_reach(reach, n, MaskDirection::forward);
  // Backward: key j is visible from query i iff i is reachable from j.
  std::vector<unsigned char> transposed(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) transposed[i * n + j] = reach[j * n + i];
  MaskMatrix bwd = binary_from_reach(transposed, n, MaskDirection::backward);
  return {std::move(fwd), std::move(bwd)};
}

std::vector<double> reach_probabilities(const Lattice& l, Execution exec) {
  std::vector<double> q(l.size() * l.size());
  if (exec == Execution::parallel)
    kernels::parallel::reach_probabilities(l, q);
  else
    kernels::serial::reach_probabilities(l, q);
  return q;
}

MaskPair prob_masks(const Lattice& l, Execution exec) {
  const std::size_t n = l.size();
  MaskMatrix fwd = log_mask(reach_probabilities(l, exec), n, MaskDirection::forward);
  MaskMatrix bwd = log_mask(reach_probabilities(reverse(l), exec), n, MaskDirection::backward);
  return {std::move(fwd), std::move(bwd)};
}

std::vector<double> brute_force_reach_probs(const Lattice& l, std::size_t max_paths) {
  const std::size_t n = l.size();
  std::vector<double> joint(n * n, 0.0);  // sum of P(path) over paths with i before j
  std::vector<double> single(n, 0.0);     // sum of P(path) over paths containing i
  std::size_t paths = 0;

  std::vector<NodeId> path{l.start()};
  std::vector<std::size_t> next_arc{0};
  std::vector<double> prob{1.0};
  while (!path.empty()) {
    const NodeId k = path.back();
    if (k == l.end()) {
      if (++paths > max_paths)
        throw PathLimitError("brute-force enumeration exceeded " + std::to_string(max_paths) + " complete paths");
      const double p = prob.back();
      for (std::size_t a = 0; a < path.size(); ++a) {
        single[path[a]] += p;
        for (std::size_t b = a + 1; b < path.size(); ++b) joint[path[a] * n + path[b]] += p;
      }
    }
    auto arcs = l.out_arcs(k);
    if (next_arc.back() < arcs.size()) {
      const Arc& a = arcs[next_arc.back()++];
      path.push_back(a.node);
      next_arc.push_back(0);
      prob.push_back(prob.back() * a.p);
    } else {
      path.pop_back();
      next_arc.pop_back();
      prob.pop_back();
    }
  }

  std::vector<double> r(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) r[i * n + j] = single[i] > 0.0 ? joint[i * n + j] / single[i] : 0.0;
    r[i * n + i] = 1.0;
  }
  return r;
}

MarginalVector compute_marginals(const Lattice& l) {
  MarginalVector p(l.size(), 0.0);
  p[l.start()] = 1.0;
  for (NodeId k : l.topological_order()) {
    if (p[k] < kFlushThreshold) {
      p[k] = 0.0;
      continue;
    }
    for (const Arc& a : l.out_arcs(k)) p[a.node] += p[k] * a.p;
  }
  return p;
}

MaskMatrix merge_nondirectional(const MaskMatrix& fwd, const MaskMatrix& bwd) {
  if (fwd.size() != bwd.size()) throw std::invalid_argument("merge_nondirectional: mask sizes differ");
  if (fwd.kind() != bwd.kind()) throw std::invalid_argument("merge_nondirectional: mask kinds differ");
  std::vector<double> m(fwd.values().begin(), fwd.values().end());
  auto b = bwd.values();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(m[i], b[i]);
  return MaskMatrix(MaskDirection::nondirectional, fwd.kind(), fwd.size(), std::move(m));
}

std::vector<MaskMatrix> head_masks(const MaskMatrix& fwd, const MaskMatrix& bwd, std::size_t n_heads,
                                   HeadStrategy strategy) {
  if (n_heads == 0) throw std::invalid_argument("head_masks: need at least one head");
  std::vector<MaskMatrix> heads;
  heads.reserve(n_heads);
  if (strategy == HeadStrategy::directional) {
    if (n_heads % 2 != 0)
      throw std::invalid_argument("head_masks: directional strategy needs an even head count, got " +
                                  std::to_string(n_heads));
    for (std::size_t h = 0; h < n_heads; ++h) heads.push_back(h < n_heads / 2 ? fwd : bwd);
  } else {
    MaskMatrix merged = merge_nondirectional(fwd, bwd);
    heads.assign(n_heads, merged);
  }
  return heads;
}

MaskMatrix adjacency_mask(const Lattice& l) {
  const std::size_t n = l.size();
  std::vector<double> m(n * n, kNegInf);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 0.0;
  for (const Edge& e : l.edges()) {
    m[e.from * n + e.to] = 0.0;
    m[e.to * n + e.from] = 0.0;
  }
  return MaskMatrix(MaskDirection::nondirectional, MaskKind::binary, n, std::move(m));
}

std::string to_tsv(const MaskMatrix& m) {
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (j) out += '\t';
      const double v = m(i, j);
      if (std::isinf(v) && v < 0) {
        out += "-inf";
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace latsa
