#include "latsa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "latsa/lattice_io.hpp"
#include "latsa/rng.hpp"

namespace latsa {

void SynthConfig::validate() const {
  if (vocab < 2) throw std::invalid_argument("vocab must be at least 2");
  if (successors == 0 || successors > vocab) throw std::invalid_argument("successors must lie in [1, vocab]");
  if (neighborhood + 1 > vocab) throw std::invalid_argument("neighborhood must be smaller than vocab");
  if (confusion_width == 0 || confusion_width > neighborhood + 1)
    throw std::invalid_argument("confusion_width must lie in [1, neighborhood + 1]");
  if (min_length == 0 || min_length > max_length) throw std::invalid_argument("need 1 <= min_length <= max_length");
  if (!(noise_margin >= 0.0 && noise_margin <= 1.0)) throw std::invalid_argument("noise_margin must lie in [0, 1]");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"seed", seed},
          {"language_seed", language_seed},
          {"n_sentences", n_sentences},
          {"vocab", vocab},
          {"successors", successors},
          {"neighborhood", neighborhood},
          {"min_length", min_length},
          {"max_length", max_length},
          {"confusion_width", confusion_width},
          {"noise_margin", noise_margin}};
}

namespace {

// k distinct values from [0, n) excluding `skip`, in draw order.
std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t n, std::size_t k, std::size_t skip) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (i != skip) pool.push_back(i);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(k);
  return pool;
}

struct Language {
  std::vector<std::vector<std::size_t>> next, confusers;
  std::vector<std::size_t> mapping;
};

Language make_language(const SynthConfig& cfg) {
  Rng rng(cfg.language_seed);
  Language lang;
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  for (std::size_t s = 0; s < cfg.vocab; ++s) {
    lang.next.push_back(sample_distinct(rng, cfg.vocab, cfg.successors, kNone));
    lang.confusers.push_back(sample_distinct(rng, cfg.vocab, cfg.neighborhood, s));
  }
  lang.mapping.resize(cfg.vocab);
  std::iota(lang.mapping.begin(), lang.mapping.end(), std::size_t{0});
  std::shuffle(lang.mapping.begin(), lang.mapping.end(), rng);
  return lang;
}

std::string src_token(std::size_t s) { return "s" + std::to_string(s); }
std::string tgt_token(std::size_t t) { return "t" + std::to_string(t); }

SynthSentence make_sentence(const SynthConfig& cfg, const Language& lang, Rng rng) {
  const std::size_t len = cfg.min_length + rng.below(cfg.max_length - cfg.min_length + 1);
  std::vector<std::size_t> sym{rng.below(cfg.vocab)};
  while (sym.size() < len) sym.push_back(lang.next[sym.back()][rng.below(cfg.successors)]);

  std::vector<std::string> tokens{kStartToken};
  std::vector<Edge> edges;
  std::vector<NodeId> prev_slot{0};
  for (std::size_t s : sym) {
    const std::size_t w = cfg.confusion_width == 1 ? 1 : cfg.confusion_width - 1 + rng.below(2);
    std::vector<std::size_t> alts{s};
    for (std::size_t c : sample_distinct(rng, cfg.neighborhood, w - 1, static_cast<std::size_t>(-1)))
      alts.push_back(lang.confusers[s][c]);

    std::vector<double> p(w);
    double total = 0.0;
    for (double& x : p) total += x = -std::log(1.0 - rng.uniform());
    for (double& x : p) x /= total;
    std::sort(p.begin(), p.end(), std::greater<>());
    // p[0] goes to the true symbol, unless the evidence is nearly tied.
    if (w >= 2 && p[0] - p[1] < cfg.noise_margin && rng.below(2) == 1) std::swap(p[0], p[1]);
    // Distractors beyond the true symbol take the remaining weights in random order.
    for (std::size_t i = w; i > 2; --i) std::swap(p[i - 1], p[1 + rng.below(i - 1)]);

    std::vector<std::size_t> order(w);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<NodeId> slot;
    for (std::size_t k : order) {
      const NodeId id = tokens.size();
      tokens.push_back(src_token(alts[k]));
      for (NodeId from : prev_slot) edges.push_back({from, id, p[k]});
      slot.push_back(id);
    }
    prev_slot = std::move(slot);
  }
  const NodeId end = tokens.size();
  tokens.push_back(kEndToken);
  for (NodeId from : prev_slot) edges.push_back({from, end, 1.0});

  SynthSentence out{Lattice(std::move(tokens), std::move(edges), 0, end), {}, {}, {}};
  for (std::size_t s : sym) out.source.push_back(src_token(s));
  for (auto it = sym.rbegin(); it != sym.rend(); ++it) out.target.push_back(tgt_token(lang.mapping[*it]));
  out.one_best = path_tokens(out.lattice, viterbi_best_path(out.lattice));
  return out;
}

}  // namespace

SynthCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  const Language lang = make_language(cfg);
  const Rng root(cfg.seed);
  SynthCorpus corpus{cfg, {}};
  corpus.sentences.reserve(cfg.n_sentences);
  for (std::size_t i = 0; i < cfg.n_sentences; ++i) corpus.sentences.push_back(make_sentence(cfg, lang, root.split(i)));
  return corpus;
}

double SynthCorpus::one_best_error_rate() const {
  std::size_t wrong = 0, total = 0;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.source.size(); ++i) wrong += s.one_best.at(i) != s.source[i];
    total += s.source.size();
  }
  return total ? static_cast<double>(wrong) / static_cast<double>(total) : 0.0;
}

double SynthCorpus::density() const {
  std::size_t nodes = 0, tokens = 0;
  for (const auto& s : sentences) {
    nodes += s.lattice.size() - 2;
    tokens += s.source.size();
  }
  return tokens ? static_cast<double>(nodes) / static_cast<double>(tokens) : 0.0;
}

std::string join(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

void write_corpus(const SynthCorpus& corpus, const std::string& prefix) {
  const auto dir = std::filesystem::path(prefix).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream lat(prefix + ".lat.jsonl"), best(prefix + ".1best.txt"), oracle(prefix + ".oracle.txt"),
      tgt(prefix + ".tgt.txt");
  if (!lat || !best || !oracle || !tgt) throw std::runtime_error("cannot write corpus files at " + prefix);
  for (const auto& s : corpus.sentences) {
    lat << to_json(s.lattice) << '\n';
    best << join(s.one_best) << '\n';
    oracle << join(s.source) << '\n';
    tgt << join(s.target) << '\n';
  }
}

std::vector<TokenSeq> read_token_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<TokenSeq> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    TokenSeq toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    out.push_back(std::move(toks));
  }
  return out;
}

CorpusFiles read_corpus(const std::string& prefix) {
  CorpusFiles f;
  std::ifstream is(prefix + ".lat.jsonl");
  if (!is) throw std::runtime_error("cannot open " + prefix + ".lat.jsonl");
  std::stringstream ss;
  ss << is.rdbuf();
  f.lattices = parse_lattices(ss.str(), LatticeFormat::json);
  f.one_best = read_token_file(prefix + ".1best.txt");
  f.oracle = read_token_file(prefix + ".oracle.txt");
  f.target = read_token_file(prefix + ".tgt.txt");
  if (f.one_best.size() != f.lattices.size() || f.oracle.size() != f.lattices.size() ||
      f.target.size() != f.lattices.size())
    throw std::runtime_error("corpus files at " + prefix + " have mismatched line counts");
  return f;
}

}  // namespace latsa
