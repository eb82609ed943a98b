#pragma once

// Data-parallel inner loops. Each kernel has a serial reference and an OpenMP
// variant; the variants split work only across independent output rows, so
// their results are bit-identical to the serial reference.

#include <cstddef>
#include <span>

#include "latsa/lattice.hpp"

namespace latsa::kernels {

namespace serial {

/// Algorithm-1 style sweep: q[i][j] = P(complete path has j after i | has i).
/// `q` is row-major |V| x |V| and is overwritten.
void reach_probabilities(const Lattice& l, std::span<double> q);

/// reach[i][j] = 1 iff j is reachable from i or i == j.
void reachability(const Lattice& l, std::span<unsigned char> reach);

/// c (m x n) = a (m x k) * b (k x n), or c += when accumulate is set.
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool accumulate = false);

}  // namespace serial

namespace parallel {

void reach_probabilities(const Lattice& l, std::span<double> q);
void reachability(const Lattice& l, std::span<unsigned char> reach);
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
            bool accumulate = false);

}  // namespace parallel

/// Rows below this count run the serial matmul; spawning a team costs more.
inline constexpr std::size_t kParallelMatmulMinRows = 64;

}  // namespace latsa::kernels
