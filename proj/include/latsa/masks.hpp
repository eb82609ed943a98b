#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "latsa/lattice.hpp"

namespace latsa {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Reaching probabilities below this are treated as 0 (-inf after the log).
inline constexpr double kFlushThreshold = 1e-300;

enum class MaskDirection { forward, backward, nondirectional };
enum class MaskKind { binary, probabilistic };
enum class HeadStrategy { directional, nondirectional };

const char* to_string(MaskDirection d);
const char* to_string(MaskKind k);

/// Square additive attention mask, indexed [query][key], entries in [-inf, 0].
class MaskMatrix {
public:
  MaskMatrix() = default;
  MaskMatrix(MaskDirection dir, MaskKind kind, std::size_t n, std::vector<double> values);

  /// All-zero mask (no masking).
  static MaskMatrix zeros(std::size_t n, MaskDirection dir = MaskDirection::nondirectional,
                          MaskKind kind = MaskKind::binary);

  MaskDirection direction() const { return dir_; }
  MaskKind kind() const { return kind_; }
  std::size_t size() const { return n_; }

  double operator()(std::size_t query, std::size_t key) const { return m_[query * n_ + key]; }
  std::span<const double> row(std::size_t query) const {
    return std::span<const double>(m_).subspan(query * n_, n_);
  }
  std::span<const double> values() const { return m_; }

private:
  MaskDirection dir_ = MaskDirection::nondirectional;
  MaskKind kind_ = MaskKind::binary;
  std::size_t n_ = 0;
  std::vector<double> m_;
};

struct MaskPair {
  MaskMatrix fwd;
  MaskMatrix bwd;
};

/// Probability that a complete path contains node j, given it contains start.
using MarginalVector = std::vector<double>;

/// Forward entry [i][j] is 0 iff j is reachable from i (or i == j); backward
/// is the same on the transposed graph.
MaskPair binary_masks(const Lattice& l);

enum class Execution { serial, parallel };

/// Logarithmized pairwise reaching probabilities, forward on the lattice and
/// backward on reverse(l). Each query row is an independent topological sweep,
/// so the parallel path returns bit-identical results to the serial one.
MaskPair prob_masks(const Lattice& l, Execution exec = Execution::parallel);

/// Exponentiated forward reaching probabilities (row-major |V| x |V|).
std::vector<double> reach_probabilities(const Lattice& l, Execution exec = Execution::parallel);

class PathLimitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Definitional oracle: enumerates every complete path and returns
/// P(path has i then j) / P(path has i) with 1 on the diagonal. Exponential
/// time; throws PathLimitError beyond `max_paths` complete paths.
std::vector<double> brute_force_reach_probs(const Lattice& l, std::size_t max_paths = 1000000);

MarginalVector compute_marginals(const Lattice& l);

/// Elementwise maximum of two masks of the same shape and kind.
MaskMatrix merge_nondirectional(const MaskMatrix& fwd, const MaskMatrix& bwd);

/// Directional: heads [0, n/2) get fwd and [n/2, n) get bwd. Nondirectional:
/// every head gets the merged mask.
std::vector<MaskMatrix> head_masks(const MaskMatrix& fwd, const MaskMatrix& bwd, std::size_t n_heads,
                                   HeadStrategy strategy);

/// Mask allowing only the query itself and its direct neighbors in either
/// direction (graph-attention style local context).
MaskMatrix adjacency_mask(const Lattice& l);

/// Tab-separated rows, "-inf" for -inf and %.17g otherwise.
std::string to_tsv(const MaskMatrix& m);

}  // namespace latsa
