#include "latsa/recurrent.hpp"

#include <algorithm>
#include <tuple>

namespace latsa {

LstmCell::LstmCell(const std::string& name, std::size_t input_dim, std::size_t hidden_dim, ParameterStore& store,
                   Rng& rng)
    : hidden_(hidden_dim) {
  w_ = &store.add_glorot(name + ".W", {input_dim + hidden_dim, 4 * hidden_dim}, rng);
  std::vector<double> b(4 * hidden_dim, 0.0);
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden_dim), b.begin() + static_cast<std::ptrdiff_t>(2 * hidden_dim),
            1.0);
  b_ = &store.add(name + ".b", {4 * hidden_dim}, std::move(b));
}

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& x, const Tensor& h, const Tensor& c) const {
  Tensor z = add_row(matmul(concat_cols({x, h}), w_->var()), b_->var());
  Tensor i = sigmoid(slice_cols(z, 0, hidden_));
  Tensor f = sigmoid(slice_cols(z, hidden_, hidden_));
  Tensor g = tanh(slice_cols(z, 2 * hidden_, hidden_));
  Tensor o = sigmoid(slice_cols(z, 3 * hidden_, hidden_));
  Tensor c2 = add(mul(f, c), mul(i, g));
  return {mul(o, tanh(c2)), c2};
}

nlohmann::json RecurrentConfig::to_json() const {
  return {{"d_embed", d_embed}, {"d_hidden", d_hidden}, {"n_layers", n_layers}, {"dropout", dropout}};
}

RecurrentConfig RecurrentConfig::from_json(const nlohmann::json& j) {
  RecurrentConfig c;
  c.d_embed = j.value("d_embed", c.d_embed);
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.dropout = j.value("dropout", c.dropout);
  return c;
}

RecurrentLatticeEncoder::RecurrentLatticeEncoder(const RecurrentConfig& cfg, std::size_t vocab_size,
                                                 ParameterStore& store, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  emb_ = &store.add_glorot(prefix + ".emb", {vocab_size, cfg_.d_embed}, rng);
  std::size_t in = cfg_.d_embed;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    fwd_.emplace_back(lp + ".fwd", in, cfg_.d_hidden, store, rng);
    bwd_.emplace_back(lp + ".bwd", in, cfg_.d_hidden, store, rng);
    in = 2 * cfg_.d_hidden;
  }
}

Tensor RecurrentLatticeEncoder::run_direction(const Lattice& l, const MarginalVector& marg, const Tensor& x,
                                              const LstmCell& cell, bool forward) const {
  const std::size_t n = l.size();
  const auto& topo = l.topological_order();
  std::vector<Tensor> hs(n), cs(n);
  const Tensor zero = Tensor::zeros({1, cell.hidden_dim()});
  std::vector<Tensor> ph, pc;
  std::vector<double> w;
  for (std::size_t t = 0; t < n; ++t) {
    const NodeId j = forward ? topo[t] : topo[n - 1 - t];
    ph.clear();
    pc.clear();
    w.clear();
    if (forward) {
      for (const Arc& a : l.in_arcs(j)) {
        ph.push_back(hs[a.node]);
        pc.push_back(cs[a.node]);
        w.push_back(marg[a.node] * a.p / marg[j]);
      }
    } else {
      for (const Arc& a : l.out_arcs(j)) {
        ph.push_back(hs[a.node]);
        pc.push_back(cs[a.node]);
        w.push_back(a.p);
      }
    }
    Tensor h0 = zero, c0 = zero;
    if (ph.size() == 1) {
      h0 = ph[0];
      c0 = pc[0];
    } else if (!ph.empty()) {
      double total = 0.0;
      for (double v : w) total += v;
      for (double& v : w) v /= total;
      h0 = weighted_sum(ph, w);
      c0 = weighted_sum(pc, w);
    }
    std::tie(hs[j], cs[j]) = cell.step(select_row(x, j), h0, c0);
  }
  return concat_rows(hs);
}

Tensor RecurrentLatticeEncoder::encode(const PreparedLattice& in, Mode mode, Rng* rng) const {
  const Lattice& l = *in.lattice;
  Tensor x = dropout(gather_rows(emb_->var(), in.token_ids), cfg_.dropout, mode, rng);
  for (std::size_t layer = 0; layer < cfg_.n_layers; ++layer) {
    Tensor f = run_direction(l, in.marginals, x, fwd_[layer], true);
    Tensor b = run_direction(l, in.marginals, x, bwd_[layer], false);
    x = dropout(concat_cols({f, b}), cfg_.dropout, mode, rng);
  }
  return x;
}

}  // namespace latsa
