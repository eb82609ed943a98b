#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "latsa/lattice.hpp"

namespace latsa {

enum class LatticeFormat { json, plf };
enum class PlfProb { linear, log };

/// Parses one lattice. JSON node ids may be any distinct integers and are
/// reassigned densely in ascending order; PLF is converted through line_graph.
/// Throws LatticeError (kind syntax carries line and offset).
Lattice parse_lattice(std::string_view text, LatticeFormat format, PlfProb plf_prob = PlfProb::linear);

/// Parses the edge-labeled structure of one PLF line without converting it.
EdgeLabeledLattice parse_plf(std::string_view text, PlfProb plf_prob = PlfProb::linear);

/// A whole JSON document holding one lattice, or one lattice per non-empty line.
std::vector<Lattice> parse_lattices(std::string_view text, LatticeFormat format,
                                    PlfProb plf_prob = PlfProb::linear);

/// Single-line canonical JSON. Doubles are printed in shortest round-trip
/// form, so parse_lattice(to_json(l)) reproduces every probability bit-exactly.
std::string to_json(const Lattice& l);

/// Graphviz export; nodes are labeled "token\np=marginal" and shaded by marginal.
std::string to_dot(const Lattice& l);

}  // namespace latsa
