#include "latsa/kernels.hpp"

#include <algorithm>
#include <vector>

#include "latsa/masks.hpp"

namespace latsa::kernels {
namespace {

// Position of each node in the topological order, so a query's sweep can start
// at the query itself: every node earlier in the order has q == 0.
std::vector<std::size_t> topo_rank(const Lattice& l) {
  const auto& order = l.topological_order();
  std::vector<std::size_t> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

void sweep_query(const Lattice& l, const std::vector<std::size_t>& rank, NodeId i, double* row) {
  const auto& order = l.topological_order();
  const std::size_t n = l.size();
  std::fill(row, row + n, 0.0);
  row[i] = 1.0;
  for (std::size_t r = rank[i]; r < n; ++r) {
    const NodeId k = order[r];
    double qk = row[k];
    if (qk < kFlushThreshold) {
      row[k] = 0.0;
      continue;
    }
    for (const Arc& a : l.out_arcs(k)) row[a.node] += a.p * qk;
  }
}

void reach_query(const Lattice& l, const std::vector<std::size_t>& rank, NodeId i, unsigned char* row) {
  const auto& order = l.topological_order();
  const std::size_t n = l.size();
  std::fill(row, row + n, 0);
  row[i] = 1;
  for (std::size_t r = rank[i]; r < n; ++r) {
    const NodeId k = order[r];
    if (!row[k]) continue;
    for (const Arc& a : l.out_arcs(k)) row[a.node] = 1;
  }
}

// Outputs never alias inputs; saying so lets the j loop vectorize.
inline void matmul_rows(const double* __restrict a, const double* __restrict b, double* __restrict c,
                        std::size_t row_begin, std::size_t row_end, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    double* __restrict ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ai[t];
      const double* __restrict bt = b + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
}

}  // namespace

namespace serial {

void reach_probabilities(const Lattice& l, std::span<double> q) {
  const std::size_t n = l.size();
  const auto rank = topo_rank(l);
  for (NodeId i = 0; i < n; ++i) sweep_query(l, rank, i, q.data() + i * n);
}

void reachability(const Lattice& l, std::span<unsigned char> reach) {
  const std::size_t n = l.size();
  const auto rank = topo_rank(l);
  for (NodeId i = 0; i < n; ++i) reach_query(l, rank, i, reach.data() + i * n);
}

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool accumulate) {
  matmul_rows(a, b, c, 0, m, k, n, accumulate);
}

}  // namespace serial

namespace parallel {

void reach_probabilities(const Lattice& l, std::span<double> q) {
  const std::size_t n = l.size();
  const auto rank = topo_rank(l);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (long long i = 0; i < count; ++i) {
    sweep_query(l, rank, static_cast<NodeId>(i), q.data() + static_cast<std::size_t>(i) * n);
  }
}

void reachability(const Lattice& l, std::span<unsigned char> reach) {
  const std::size_t n = l.size();
  const auto rank = topo_rank(l);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (long long i = 0; i < count; ++i) {
    reach_query(l, rank, static_cast<NodeId>(i), reach.data() + static_cast<std::size_t>(i) * n);
  }
}

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool accumulate) {
  if (m < kParallelMatmulMinRows) {
    matmul_rows(a, b, c, 0, m, k, n, accumulate);
    return;
  }
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) {
    matmul_rows(a, b, c, static_cast<std::size_t>(i), static_cast<std::size_t>(i) + 1, k, n, accumulate);
  }
}

}  // namespace parallel

}  // namespace latsa::kernels
