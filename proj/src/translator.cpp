#include "latsa/translator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace latsa {

const char* to_string(EncoderKind k) {
  return k == EncoderKind::self_attention ? "self_attention" : "lattice_recurrent";
}

std::size_t ModelConfig::encoder_dim() const {
  return encoder == EncoderKind::self_attention ? attention.d_model : 2 * recurrent.d_hidden;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"encoder", to_string(encoder)},     {"attention", attention.to_json()},
          {"recurrent", recurrent.to_json()},  {"d_embed", d_embed},
          {"d_hidden", d_hidden},              {"decoder_dropout", decoder_dropout},
          {"label_smoothing", label_smoothing}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("encoder")) {
    const auto e = j["encoder"].get<std::string>();
    if (e == "self_attention")
      c.encoder = EncoderKind::self_attention;
    else if (e == "lattice_recurrent")
      c.encoder = EncoderKind::lattice_recurrent;
    else
      throw std::invalid_argument("unknown encoder kind '" + e + "'");
  }
  if (j.contains("attention")) c.attention = EncoderConfig::from_json(j["attention"]);
  if (j.contains("recurrent")) c.recurrent = RecurrentConfig::from_json(j["recurrent"]);
  c.d_embed = j.value("d_embed", c.d_embed);
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.decoder_dropout = j.value("decoder_dropout", c.decoder_dropout);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  return c;
}

AttentionResult cross_attention(const Tensor& query, const Tensor& enc, std::span<const double> log_marginals) {
  if (log_marginals.size() != enc.rows())
    throw ShapeError("cross_attention: " + std::to_string(log_marginals.size()) + " marginals for " +
                     std::to_string(enc.rows()) + " encoder rows");
  Tensor w = masked_softmax_rows(matmul(query, transpose(enc)), log_marginals);
  AttentionResult r;
  r.weights.assign(w.values().begin(), w.values().end());
  r.context = matmul(w, enc);
  return r;
}

TranslationModel::TranslationModel(ModelConfig cfg, Vocab source, Vocab target, std::uint64_t seed)
    : cfg_(std::move(cfg)), src_(std::move(source)), tgt_(std::move(target)) {
  Rng rng(seed);
  if (cfg_.encoder == EncoderKind::self_attention)
    attention_ = std::make_unique<EncoderStack>(cfg_.attention, src_.size(), store_, rng, "enc");
  else
    recurrent_ = std::make_unique<RecurrentLatticeEncoder>(cfg_.recurrent, src_.size(), store_, rng, "rnn");
  const std::size_t de = cfg_.encoder_dim(), dh = cfg_.d_hidden;
  emb_ = &store_.add_glorot("dec.emb", {tgt_.size(), cfg_.d_embed}, rng);
  init_w_ = &store_.add_glorot("dec.init.W", {de, dh}, rng);
  init_b_ = &store_.add_constant("dec.init.b", {dh}, 0.0);
  cell_ = LstmCell("dec.lstm", cfg_.d_embed + de, dh, store_, rng);
  att_w_ = &store_.add_glorot("dec.att.W", {dh, de}, rng);
  out_w_ = &store_.add_glorot("dec.out.W", {dh + de, tgt_.size()}, rng);
  out_b_ = &store_.add_constant("dec.out.b", {tgt_.size()}, 0.0);
}

PreparedLattice TranslationModel::prepare(const Lattice& l) const {
  if (cfg_.encoder == EncoderKind::self_attention) return prepare_lattice(l, src_, cfg_.attention);
  EncoderConfig light;
  light.n_heads = 1;
  light.d_model = 1;
  light.direction = HeadStrategy::nondirectional;
  light.mask_kind = EncoderMask::none;
  light.positions = PositionScheme::none;
  return prepare_lattice(l, src_, light);
}

Tensor TranslationModel::encode(const PreparedLattice& src, Mode mode, Rng* rng) const {
  return attention_ ? attention_->encode(src, mode, rng) : recurrent_->encode(src, mode, rng);
}

DecoderState TranslationModel::initial_state(const Tensor& enc) const {
  DecoderState s;
  s.h = tanh(add_row(matmul(mean_rows(enc), init_w_->var()), init_b_->var()));
  s.c = Tensor::zeros({1, cfg_.d_hidden});
  s.feed = Tensor::zeros({1, cfg_.encoder_dim()});
  return s;
}

StepOutput TranslationModel::decode_step(const DecoderState& state, std::size_t prev_token, const Tensor& enc,
                                         std::span<const double> log_marginals, Mode mode, Rng* rng) const {
  const std::size_t id[1] = {prev_token};
  Tensor e = dropout(gather_rows(emb_->var(), id), cfg_.decoder_dropout, mode, rng);
  auto [h, c] = cell_.step(concat_cols({e, state.feed}), state.h, state.c);
  AttentionResult att = cross_attention(matmul(h, att_w_->var()), enc, log_marginals);
  Tensor out = dropout(concat_cols({h, att.context}), cfg_.decoder_dropout, mode, rng);
  StepOutput r;
  r.logits = add_row(matmul(out, out_w_->var()), out_b_->var());
  r.state = {h, c, att.context};
  r.attention = std::move(att.weights);
  return r;
}

Tensor TranslationModel::teacher_forced_logits(const PreparedLattice& src, std::span<const std::size_t> target,
                                               Mode mode, Rng* rng) const {
  Tensor enc = encode(src, mode, rng);
  DecoderState s = initial_state(enc);
  std::vector<Tensor> rows;
  rows.reserve(target.size() + 1);
  std::size_t prev = Vocab::kBos;
  for (std::size_t t = 0; t <= target.size(); ++t) {
    StepOutput o = decode_step(s, prev, enc, src.log_marginals, mode, rng);
    rows.push_back(o.logits);
    s = std::move(o.state);
    if (t < target.size()) prev = target[t];
  }
  return concat_rows(rows);
}

Tensor TranslationModel::loss(const PreparedLattice& src, std::span<const std::size_t> target, Mode mode,
                              Rng* rng) const {
  std::vector<std::size_t> gold(target.begin(), target.end());
  gold.push_back(Vocab::kEos);
  return smoothed_cross_entropy(teacher_forced_logits(src, target, mode, rng), gold, cfg_.label_smoothing);
}

namespace {

struct Hypothesis {
  std::vector<std::size_t> tokens;
  double score = 0.0;
  DecoderState state;
};

}  // namespace

std::vector<std::size_t> TranslationModel::translate(const PreparedLattice& src, std::size_t beam) const {
  if (beam == 0) throw std::invalid_argument("beam size must be positive");
  NoGradGuard guard;
  Tensor enc = encode(src, Mode::infer, nullptr);
  const std::size_t max_len = 2 * src.size() + 8;

  std::vector<Hypothesis> active{{{}, 0.0, initial_state(enc)}};
  std::vector<std::pair<std::vector<std::size_t>, double>> finished;  // tokens without </s>, normalized score

  for (std::size_t len = 0; len <= max_len && !active.empty() && finished.size() < beam; ++len) {
    struct Candidate {
      double score;
      std::size_t hyp, token;
    };
    std::vector<Candidate> cands;
    std::vector<DecoderState> next_states;
    for (std::size_t hi = 0; hi < active.size(); ++hi) {
      const Hypothesis& h = active[hi];
      StepOutput o = decode_step(h.state, h.tokens.empty() ? Vocab::kBos : h.tokens.back(), enc, src.log_marginals,
                                 Mode::infer, nullptr);
      const auto lp = log_softmax_row(o.logits.values());
      next_states.push_back(std::move(o.state));
      if (len == max_len) {
        cands.push_back({h.score + lp[Vocab::kEos], hi, Vocab::kEos});
        continue;
      }
      for (std::size_t k = 0; k < lp.size(); ++k) cands.push_back({h.score + lp[k], hi, k});
    }
    const std::size_t keep = std::min(cands.size(), beam - finished.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      std::vector<std::size_t> toks = active[c.hyp].tokens;
      if (c.token == Vocab::kEos) {
        finished.emplace_back(std::move(toks), c.score / static_cast<double>(len + 1));
      } else {
        toks.push_back(c.token);
        next.push_back({std::move(toks), c.score, next_states[c.hyp]});
      }
    }
    active = std::move(next);
  }
  auto best = std::max_element(finished.begin(), finished.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  return best == finished.end() ? std::vector<std::size_t>{} : best->first;
}

std::vector<std::string> TranslationModel::translate_tokens(const Lattice& l, std::size_t beam) const {
  std::vector<std::string> out;
  for (std::size_t id : translate(prepare(l), beam)) out.push_back(tgt_.token(id));
  return out;
}

nlohmann::json TranslationModel::manifest() const {
  return {{"format", "latsa-model-1"},
          {"config", cfg_.to_json()},
          {"source_vocab", src_.to_json()},
          {"target_vocab", tgt_.to_json()}};
}

void TranslationModel::save(const std::string& path) const { save_checkpoint(path, store_, manifest()); }

TranslationModel TranslationModel::load(const std::string& path) {
  std::ifstream ms(path + ".json");
  if (!ms) throw std::runtime_error("missing model manifest " + path + ".json");
  const nlohmann::json m = nlohmann::json::parse(ms);
  TranslationModel model(ModelConfig::from_json(m.at("config")), Vocab::from_json(m.at("source_vocab")),
                         Vocab::from_json(m.at("target_vocab")));
  load_checkpoint(path, model.store_);
  return model;
}

}  // namespace latsa
