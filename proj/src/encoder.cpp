#include "latsa/encoder.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace latsa {

const char* to_string(EncoderMask m) {
  switch (m) {
    case EncoderMask::binary: return "binary";
    case EncoderMask::probabilistic: return "probabilistic";
    case EncoderMask::none: return "none";
  }
  return "?";
}

const char* to_string(PositionScheme p) {
  switch (p) {
    case PositionScheme::longest_path: return "longest_path";
    case PositionScheme::topological: return "topological";
    case PositionScheme::none: return "none";
  }
  return "?";
}

const char* to_string(HeadStrategy s) {
  return s == HeadStrategy::directional ? "directional" : "nondirectional";
}

namespace {

template <class E>
E parse_enum(const std::string& s, std::initializer_list<E> options, const char* what) {
  for (E e : options)
    if (s == to_string(e)) return e;
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

}  // namespace

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0)
    throw std::invalid_argument("encoder dimensions must be positive");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                                std::to_string(n_heads));
  if (direction == HeadStrategy::directional && n_heads % 2 != 0)
    throw std::invalid_argument("directional masking needs an even head count, got " + std::to_string(n_heads));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (max_position == 0) throw std::invalid_argument("max_position must be positive");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_heads", n_heads},
          {"n_layers", n_layers},
          {"d_ff", d_ff},
          {"dropout", dropout},
          {"mask_kind", to_string(mask_kind)},
          {"direction", to_string(direction)},
          {"positions", to_string(positions)},
          {"max_position", max_position},
          {"scale_by_head_dim", scale_by_head_dim}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.max_position = j.value("max_position", c.max_position);
  c.scale_by_head_dim = j.value("scale_by_head_dim", c.scale_by_head_dim);
  if (j.contains("mask_kind"))
    c.mask_kind = parse_enum(j["mask_kind"].get<std::string>(),
                             {EncoderMask::binary, EncoderMask::probabilistic, EncoderMask::none}, "mask kind");
  if (j.contains("direction"))
    c.direction = parse_enum(j["direction"].get<std::string>(),
                             {HeadStrategy::directional, HeadStrategy::nondirectional}, "head strategy");
  if (j.contains("positions"))
    c.positions =
        parse_enum(j["positions"].get<std::string>(),
                   {PositionScheme::longest_path, PositionScheme::topological, PositionScheme::none}, "positions");
  c.validate();
  return c;
}

PreparedLattice prepare_lattice(const Lattice& l, const Vocab& vocab, const EncoderConfig& cfg) {
  PreparedLattice p;
  p.lattice = std::make_shared<const Lattice>(l);
  p.token_ids = vocab.ids(l.tokens());

  switch (cfg.positions) {
    case PositionScheme::longest_path: p.positions = longest_path_positions(l); break;
    case PositionScheme::topological: p.positions = topological_positions(l); break;
    case PositionScheme::none: p.positions.assign(l.size(), 0); break;
  }

  if (cfg.mask_kind == EncoderMask::none) {
    auto z = std::make_shared<const MaskMatrix>(MaskMatrix::zeros(l.size()));
    p.head_masks.assign(cfg.n_heads, z);
  } else {
    MaskPair pair = cfg.mask_kind == EncoderMask::binary ? binary_masks(l) : prob_masks(l);
    auto heads = head_masks(pair.fwd, pair.bwd, cfg.n_heads, cfg.direction);
    // Heads sharing a direction share one matrix.
    std::vector<std::shared_ptr<const MaskMatrix>> distinct;
    for (auto& h : heads) {
      std::shared_ptr<const MaskMatrix> hit;
      for (const auto& d : distinct)
        if (d->direction() == h.direction()) hit = d;
      if (!hit) {
        hit = std::make_shared<const MaskMatrix>(std::move(h));
        distinct.push_back(hit);
      }
      p.head_masks.push_back(hit);
    }
  }

  p.marginals = compute_marginals(l);
  p.log_marginals.resize(p.marginals.size());
  for (std::size_t i = 0; i < p.marginals.size(); ++i) p.log_marginals[i] = std::log(p.marginals[i]);
  return p;
}

std::string to_tsv(const AttentionTrace& trace) {
  std::ostringstream os;
  char buf[32];
  for (std::size_t l = 0; l < trace.weights.size(); ++l)
    for (std::size_t h = 0; h < trace.weights[l].size(); ++h) {
      os << "# layer " << l << " head " << h << '\n';
      const auto& w = trace.weights[l][h];
      for (std::size_t i = 0; i < trace.n; ++i) {
        for (std::size_t j = 0; j < trace.n; ++j) {
          std::snprintf(buf, sizeof buf, "%.17g", w[i * trace.n + j]);
          os << (j ? "\t" : "") << buf;
        }
        os << '\n';
      }
    }
  return os.str();
}

EncoderStack::EncoderStack(const EncoderConfig& cfg, std::size_t vocab_size, ParameterStore& store, Rng& rng,
                           const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, dh = cfg_.head_dim();
  tok_emb_ = &store.add_glorot(prefix + ".tok_emb", {vocab_size, d}, rng);
  pos_emb_ = &store.add_glorot(prefix + ".pos_emb", {cfg_.max_position, d}, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    EncoderLayerParams lay;
    // Q, K and V for all heads live in one d x 3d matrix so a layer needs a
    // single projection; each d x (d/h) block gets its own Glorot range.
    std::vector<double> w(d * 3 * d);
    const double r = std::sqrt(6.0 / static_cast<double>(d + dh));
    for (double& x : w) x = r * (2.0 * rng.uniform() - 1.0);
    lay.wqkv = &store.add(lp + ".Wqkv", {d, 3 * d}, std::move(w));
    lay.ln1_gain = &store.add_constant(lp + ".ln1.gain", {d}, 1.0);
    lay.ln1_bias = &store.add_constant(lp + ".ln1.bias", {d}, 0.0);
    lay.ff_w1 = &store.add_glorot(lp + ".ff.W1", {d, cfg_.d_ff}, rng);
    lay.ff_b1 = &store.add_constant(lp + ".ff.b1", {cfg_.d_ff}, 0.0);
    lay.ff_w2 = &store.add_glorot(lp + ".ff.W2", {cfg_.d_ff, d}, rng);
    lay.ff_b2 = &store.add_constant(lp + ".ff.b2", {d}, 0.0);
    lay.ln2_gain = &store.add_constant(lp + ".ln2.gain", {d}, 1.0);
    lay.ln2_bias = &store.add_constant(lp + ".ln2.bias", {d}, 0.0);
    layers_.push_back(std::move(lay));
  }
}

Tensor EncoderStack::embed_inputs(const PreparedLattice& in, Mode mode, Rng* rng) const {
  for (std::size_t i = 0; i < in.positions.size(); ++i)
    if (in.positions[i] >= cfg_.max_position)
      throw std::out_of_range("node " + std::to_string(i) + " has position " + std::to_string(in.positions[i]) +
                              ", beyond max_position " + std::to_string(cfg_.max_position));
  Tensor x = gather_rows(tok_emb_->var(), in.token_ids);
  if (cfg_.positions != PositionScheme::none) x = add(x, gather_rows(pos_emb_->var(), in.positions));
  return dropout(x, cfg_.dropout, mode, rng);
}

Tensor EncoderStack::encoder_layer(std::size_t layer, const Tensor& x, const std::vector<const MaskMatrix*>& masks,
                                   Mode mode, Rng* rng, AttentionTrace* trace) const {
  const EncoderLayerParams& p = layers_.at(layer);
  if (masks.size() != cfg_.n_heads)
    throw ShapeError("encoder layer expects " + std::to_string(cfg_.n_heads) + " masks, got " +
                     std::to_string(masks.size()));
  const std::size_t n = x.rows();
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.scale_by_head_dim ? cfg_.head_dim() : cfg_.d_model));

  std::vector<const double*> mask_ptrs;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    if (masks[h]->size() != n)
      throw ShapeError("mask for head " + std::to_string(h) + " is " + std::to_string(masks[h]->size()) +
                       " wide, input has " + std::to_string(n) + " rows");
    mask_ptrs.push_back(masks[h]->values().data());
  }
  std::vector<std::vector<double>>* weights = nullptr;
  if (trace) {
    if (trace->weights.size() <= layer) trace->weights.resize(layer + 1);
    trace->weights[layer].clear();
    trace->n = n;
    weights = &trace->weights[layer];
  }
  // Only QK^T is scaled; the mask enters unscaled so that exp(mask) keeps
  // its meaning as a probability weight.
  Tensor hcat = multi_head_attention(matmul(x, p.wqkv->var()), mask_ptrs, s, cfg_.dropout, mode, rng, weights);
  Tensor l = layer_norm(add(dropout(hcat, cfg_.dropout, mode, rng), x), p.ln1_gain->var(), p.ln1_bias->var());
  Tensor ff = feed_forward(l, p.ff_w1->var(), p.ff_b1->var(), p.ff_w2->var(), p.ff_b2->var());
  return layer_norm(add(dropout(ff, cfg_.dropout, mode, rng), l), p.ln2_gain->var(), p.ln2_bias->var());
}

Tensor EncoderStack::encode(const PreparedLattice& in, Mode mode, Rng* rng, AttentionTrace* trace) const {
  if (in.head_masks.size() != cfg_.n_heads)
    throw ShapeError("prepared lattice carries " + std::to_string(in.head_masks.size()) + " head masks, encoder has " +
                     std::to_string(cfg_.n_heads) + " heads");
  std::vector<const MaskMatrix*> masks;
  for (const auto& m : in.head_masks) masks.push_back(m.get());
  Tensor x = embed_inputs(in, mode, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) x = encoder_layer(l, x, masks, mode, rng, trace);
  return x;
}

}  // namespace latsa
