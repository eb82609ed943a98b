#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latsa/lattice.hpp"
#include "latsa/metrics.hpp"

namespace latsa {

/// Synthetic noisy-lattice translation task.
///
/// Source sentences are random walks over a bigram grammar in which every
/// symbol has a few allowed successors. The target is the source mapped
/// through a fixed symbol permutation and reversed. Each source position
/// becomes a slot of 1..confusion_width alternatives drawn from the true
/// symbol's confusion neighborhood, weighted by a Dirichlet(1) draw. The
/// true symbol takes the largest weight unless the top two weights are within
/// noise_margin of each other, in which case it takes the runner-up with
/// probability 1/2. The 1-best path therefore errs exactly where the
/// acoustic evidence is nearly tied.
struct SynthConfig {
  std::uint64_t seed = 1;           // sentences and lattices
  std::uint64_t language_seed = 7;  // grammar, confusions, mapping
  std::size_t n_sentences = 1000;
  std::size_t vocab = 60;
  std::size_t successors = 3;
  std::size_t neighborhood = 4;
  std::size_t min_length = 4;
  std::size_t max_length = 8;
  std::size_t confusion_width = 3;
  double noise_margin = 0.1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SynthSentence {
  Lattice lattice;
  TokenSeq source;    // clean source, the oracle path
  TokenSeq one_best;  // Viterbi path through the lattice
  TokenSeq target;
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<SynthSentence> sentences;

  /// Fraction of source positions where the 1-best token differs from the truth.
  double one_best_error_rate() const;
  /// Mean lattice nodes (sentinels excluded) per source token.
  double density() const;
};

SynthCorpus generate(const SynthConfig& cfg);

/// Writes <prefix>.lat.jsonl, <prefix>.1best.txt, <prefix>.oracle.txt and
/// <prefix>.tgt.txt, one sentence per line.
void write_corpus(const SynthCorpus& corpus, const std::string& prefix);

struct CorpusFiles {
  std::vector<Lattice> lattices;
  std::vector<TokenSeq> one_best, oracle, target;
};

CorpusFiles read_corpus(const std::string& prefix);

std::vector<TokenSeq> read_token_file(const std::string& path);
std::string join(const TokenSeq& tokens);

}  // namespace latsa
