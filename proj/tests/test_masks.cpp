#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "latsa/lattice_io.hpp"
#include "latsa/masks.hpp"
#include "oracles.hpp"

using namespace latsa;

namespace {

Lattice figure3() {
  std::ifstream is(std::string(LATSA_TEST_DATA) + "/figure3.json");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_lattice(ss.str(), LatticeFormat::json);
}

// Backward reaching probabilities straight from path enumeration on the
// original lattice: P(path has j before i | path has i).
std::vector<double> brute_backward(const Lattice& l) {
  const std::size_t n = l.size();
  std::vector<double> num(n * n, 0.0), den(n, 0.0);
  for (const auto& p : oracle::complete_paths(l))
    for (std::size_t a = 0; a < p.nodes.size(); ++a) {
      den[p.nodes[a]] += p.p;
      for (std::size_t b = 0; b < a; ++b) num[p.nodes[a] * n + p.nodes[b]] += p.p;
    }
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = i == j ? 1.0 : num[i * n + j] / den[i];
  return out;
}

}  // namespace

TEST_SUITE("masks") {
  TEST_CASE("Figure 3 golden rows") {
    const Lattice l = figure3();
    const MaskPair m = prob_masks(l);
    const double want[7] = {1, 0.4, 0.6, 0.48, 0.12, 0.88, 1};
    for (int j = 0; j < 7; ++j) CHECK(std::abs(std::exp(m.fwd(0, j)) - want[j]) <= 1e-9);
    CHECK(std::abs(std::exp(m.bwd(5, 1)) - 0.45) <= 1e-9);
    CHECK(std::abs(std::exp(m.bwd(5, 2)) - 0.55) <= 1e-9);
    // Reversed transition probabilities out of e reproduce the same numbers.
    const Lattice r = reverse(l);
    for (const auto& a : r.out_arcs(5)) {
      if (a.node == 1) CHECK(std::abs(a.p - 0.45) <= 1e-9);
      if (a.node == 2) CHECK(std::abs(a.p - 0.55) <= 1e-9);
    }
    const auto bf = brute_force_reach_probs(l);
    for (int j = 0; j < 7; ++j) CHECK(std::abs(bf[j] - want[j]) <= 1e-9);
    const auto marg = compute_marginals(l);
    for (int j = 0; j < 7; ++j) CHECK(std::abs(marg[j] - want[j]) <= 1e-9);
  }

  TEST_CASE("chain masks") {
    const Lattice l = from_sequence({"a"});
    const MaskPair b = binary_masks(l);
    for (int j = 0; j < 3; ++j) CHECK(b.fwd(0, j) == 0.0);
    CHECK(b.fwd(2, 0) == kNegInf);
    CHECK(b.fwd(2, 1) == kNegInf);
    CHECK(b.fwd(2, 2) == 0.0);
    const auto bf = brute_force_reach_probs(l);
    CHECK(bf[0 * 3 + 2] == 1.0);
  }

  TEST_CASE("diamond siblings never see each other") {
    const Lattice l({"<s>", "a", "b", "</s>"}, {{0, 1, 0.4}, {0, 2, 0.6}, {1, 3, 1}, {2, 3, 1}});
    CHECK(binary_masks(l).fwd(1, 2) == kNegInf);
    CHECK(prob_masks(l).fwd(1, 2) == kNegInf);
    CHECK(brute_force_reach_probs(l)[1] == doctest::Approx(0.4).epsilon(1e-15));
  }

  TEST_CASE("oracle equivalence on random lattices, both directions") {
    Rng rng(101);
    for (int t = 0; t < 200; ++t) {
      const Lattice l = oracle::random_lattice(rng, 2 + rng.below(11));
      const std::size_t n = l.size();
      const MaskPair m = prob_masks(l);
      const auto fwd = brute_force_reach_probs(l);
      const auto bwd = brute_backward(l);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          CHECK(std::abs(std::exp(m.fwd(i, j)) - fwd[i * n + j]) <= 1e-9);
          CHECK(std::abs(std::exp(m.bwd(i, j)) - bwd[i * n + j]) <= 1e-9);
        }
    }
  }

  TEST_CASE("support: binary = probabilistic = transitive closure") {
    Rng rng(7);
    for (int t = 0; t < 50; ++t) {
      const Lattice l = oracle::random_lattice(rng, 2 + rng.below(11));
      const auto fw = oracle::floyd_warshall(l);
      const MaskPair b = binary_masks(l), p = prob_masks(l);
      for (std::size_t i = 0; i < l.size(); ++i)
        for (std::size_t j = 0; j < l.size(); ++j) {
          const bool fwd_ok = i == j || fw[i][j];
          const bool bwd_ok = i == j || fw[j][i];
          CHECK((b.fwd(i, j) == 0.0) == fwd_ok);
          CHECK((b.fwd(i, j) == kNegInf) == !fwd_ok);
          CHECK((b.bwd(i, j) == 0.0) == bwd_ok);
          CHECK(std::isfinite(p.fwd(i, j)) == fwd_ok);
          CHECK(std::isfinite(p.bwd(i, j)) == bwd_ok);
          if (i == j) CHECK(p.fwd(i, j) == 0.0);
          if (std::isfinite(p.fwd(i, j))) CHECK(p.fwd(i, j) <= 0.0);
        }
    }
  }

  TEST_CASE("marginals: row S, flow conservation, successor rows") {
    Rng rng(9);
    for (int t = 0; t < 50; ++t) {
      const Lattice l = oracle::random_lattice(rng, 2 + rng.below(11));
      const auto marg = compute_marginals(l);
      const auto q = reach_probabilities(l);
      const std::size_t n = l.size();
      CHECK(marg[l.start()] == 1.0);
      CHECK(std::abs(marg[l.end()] - 1.0) <= 1e-12);
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(marg[j] == q[l.start() * n + j]);
        if (j == l.start()) continue;
        double flow = 0.0;
        for (const auto& a : l.in_arcs(j)) flow += marg[a.node] * a.p;
        CHECK(std::abs(flow - marg[j]) <= 1e-12);
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (i == l.end()) continue;
        // Every row obeys the same flow recurrence from its own source.
        for (std::size_t j = 0; j < n; ++j) {
          CHECK((q[i * n + j] >= 0.0 && q[i * n + j] <= 1.0 + 1e-12));
          if (j == i) continue;
          double flow = 0.0;
          for (const auto& a : l.in_arcs(j)) flow += q[i * n + a.node] * a.p;
          CHECK(std::abs(flow - q[i * n + j]) <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("merge and head assignment") {
    const Lattice l({"<s>", "a", "b", "</s>"}, {{0, 1, 0.4}, {0, 2, 0.6}, {1, 3, 1}, {2, 3, 1}});
    const MaskPair p = prob_masks(l);
    const MaskMatrix merged = merge_nondirectional(p.fwd, p.bwd);
    CHECK(merged.direction() == MaskDirection::nondirectional);
    CHECK(merged(0, 3) == 0.0);
    CHECK(merged(3, 0) == 0.0);
    CHECK(merged(1, 2) == kNegInf);

    const auto heads = head_masks(p.fwd, p.bwd, 8, HeadStrategy::directional);
    REQUIRE(heads.size() == 8);
    for (int h = 0; h < 4; ++h) CHECK(heads[h].direction() == MaskDirection::forward);
    for (int h = 4; h < 8; ++h) CHECK(heads[h].direction() == MaskDirection::backward);
    const auto one = head_masks(p.fwd, p.bwd, 1, HeadStrategy::nondirectional);
    REQUIRE(one.size() == 1);
    CHECK(one[0].direction() == MaskDirection::nondirectional);
    CHECK_THROWS_AS(head_masks(p.fwd, p.bwd, 3, HeadStrategy::directional), std::invalid_argument);

    const MaskPair b = binary_masks(from_sequence({"x", "y"}));
    CHECK_THROWS_AS(merge_nondirectional(p.fwd, b.fwd), std::invalid_argument);
    CHECK_THROWS_AS(merge_nondirectional(p.fwd, binary_masks(l).bwd), std::invalid_argument);
  }

  TEST_CASE("sequences: merged masks are open, directional masks triangular") {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
      std::vector<std::string> toks(1 + rng.below(8), "w");
      const Lattice l = from_sequence(toks);
      for (const MaskPair& p : {binary_masks(l), prob_masks(l)}) {
        const MaskMatrix m = merge_nondirectional(p.fwd, p.bwd);
        for (double v : m.values()) CHECK(v == 0.0);
        for (std::size_t q = 0; q < l.size(); ++q)
          for (std::size_t k = 0; k < l.size(); ++k) {
            CHECK((p.fwd(q, k) == 0.0) == (k >= q));
            CHECK((p.bwd(q, k) == 0.0) == (k <= q));
          }
      }
    }
  }

  TEST_CASE("adjacency baseline mask") {
    const Lattice l = from_sequence({"a", "b", "c"});
    const MaskMatrix m = adjacency_mask(l);
    CHECK(m(1, 0) == 0.0);
    CHECK(m(1, 2) == 0.0);
    CHECK(m(1, 3) == kNegInf);
  }

  TEST_CASE("TSV format") {
    const MaskPair b = binary_masks(from_sequence({"a"}));
    CHECK(to_tsv(b.fwd) == "0\t0\t0\n-inf\t0\t0\n-inf\t-inf\t0\n");
    const MaskPair p = prob_masks(figure3());
    CHECK(to_tsv(p.fwd).rfind("0\t-0.916290731874155\t", 0) == 0);
  }

  TEST_CASE("path-count guard") {
    // 2^21 paths through a chain of 21 binary sausage slots.
    std::vector<std::string> toks{"<s>"};
    std::vector<Edge> edges;
    std::vector<NodeId> prev{0};
    for (int s = 0; s < 21; ++s) {
      const NodeId a = toks.size(), b = a + 1;
      toks.push_back("x");
      toks.push_back("y");
      for (NodeId p : prev) {
        edges.push_back({p, a, 0.5});
        edges.push_back({p, b, 0.5});
      }
      prev = {a, b};
    }
    const NodeId end = toks.size();
    toks.push_back("</s>");
    for (NodeId p : prev) edges.push_back({p, end, 1.0});
    CHECK_THROWS_AS(brute_force_reach_probs(Lattice(toks, edges)), PathLimitError);
  }

  TEST_CASE("reaching probabilities below the flush threshold become -inf") {
    // S->a->c carries 1e-160 * 1e-160 = 1e-320, a subnormal: flushed to 0.
    const Lattice l({"<s>", "a", "b", "c", "</s>"},
                    {{0, 1, 1e-160}, {0, 2, 1.0}, {1, 3, 1e-160}, {1, 4, 1.0}, {2, 4, 1.0}, {3, 4, 1.0}});
    const auto q = reach_probabilities(l);
    CHECK(q[0 * 5 + 1] == 1e-160);
    CHECK(q[0 * 5 + 3] == 0.0);
    CHECK(prob_masks(l).fwd(0, 3) == kNegInf);
    CHECK(binary_masks(l).fwd(0, 3) == 0.0);
  }
}
