#include "latsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace latsa {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const TokenSeq& s, std::size_t n) {
  NgramCounts c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[TokenSeq(s.begin() + i, s.begin() + i + n)];
  return c;
}

void check_sizes(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument(std::to_string(hyps.size()) + " hypotheses for " + std::to_string(refs.size()) +
                                " references");
}

}  // namespace

double corpus_bleu(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  check_sizes(hyps, refs);
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    hyp_len += static_cast<double>(hyps[s].size());
    ref_len += static_cast<double>(refs[s].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts h = ngrams(hyps[s], n), r = ngrams(refs[s], n);
      for (const auto& [g, c] : h) {
        total[n - 1] += static_cast<double>(c);
        auto it = r.find(g);
        if (it != r.end()) match[n - 1] += static_cast<double>(std::min(c, it->second));
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0) return 0.0;
    log_p += std::log(match[n] / total[n]) / 4.0;
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_p);
}

double token_accuracy(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  check_sizes(hyps, refs);
  double hits = 0, denom = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const std::size_t m = std::min(hyps[s].size(), refs[s].size());
    for (std::size_t i = 0; i < m; ++i) hits += hyps[s][i] == refs[s][i];
    denom += static_cast<double>(std::max(hyps[s].size(), refs[s].size()));
  }
  return denom == 0 ? 1.0 : hits / denom;
}

EvalResult score(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs) {
  return {token_accuracy(hyps, refs), corpus_bleu(hyps, refs)};
}

}  // namespace latsa
