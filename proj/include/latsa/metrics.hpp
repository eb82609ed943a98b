#pragma once

#include <string>
#include <vector>

namespace latsa {

using TokenSeq = std::vector<std::string>;

/// Corpus BLEU-4 on a 0-100 scale: clipped n-gram precisions for n = 1..4
/// pooled over the corpus, geometric mean, times the brevity penalty
/// exp(1 - r/c) when the hypothesis corpus is shorter than the reference.
/// Any zero precision gives 0.
double corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);

/// Position-wise matches divided by max(|hyp|, |ref|), pooled over the corpus.
double token_accuracy(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);

struct EvalResult {
  double token_accuracy = 0.0;
  double bleu = 0.0;
};

EvalResult score(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs);

}  // namespace latsa
