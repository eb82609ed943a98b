#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "latsa/encoder.hpp"
#include "latsa/parameters.hpp"
#include "latsa/tensor.hpp"

namespace latsa {

/// Standard LSTM cell, gates ordered i, f, g, o; forget-gate bias starts at 1.
class LstmCell {
public:
  LstmCell() = default;
  LstmCell(const std::string& name, std::size_t input_dim, std::size_t hidden_dim, ParameterStore& store, Rng& rng);

  std::size_t hidden_dim() const { return hidden_; }

  /// Returns (h', c') for a 1 x input row and 1 x hidden states.
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c) const;

private:
  std::size_t hidden_ = 0;
  const Parameter* w_ = nullptr;  // (input + hidden) x 4*hidden
  const Parameter* b_ = nullptr;  // 4*hidden
};

struct RecurrentConfig {
  std::size_t d_embed = 64;
  std::size_t d_hidden = 32;  // per direction
  std::size_t n_layers = 1;
  double dropout = 0.1;

  nlohmann::json to_json() const;
  static RecurrentConfig from_json(const nlohmann::json& j);
};

/// Bidirectional lattice LSTM used as a speed and quality baseline. Nodes are
/// visited one at a time in topological order (forward) and reverse order
/// (backward). A node with several predecessors receives the average of their
/// states weighted by the probability of having arrived from each of them,
/// marginal(k) * p(k -> j) / marginal(j); the backward pass weights successors
/// by p(j -> k). Output is |V| x 2*d_hidden.
class RecurrentLatticeEncoder {
public:
  RecurrentLatticeEncoder(const RecurrentConfig& cfg, std::size_t vocab_size, ParameterStore& store, Rng& rng,
                          const std::string& prefix = "rnn");

  const RecurrentConfig& config() const { return cfg_; }
  std::size_t output_dim() const { return 2 * cfg_.d_hidden; }

  Tensor encode(const PreparedLattice& in, Mode mode, Rng* rng) const;

private:
  Tensor run_direction(const Lattice& l, const MarginalVector& marg, const Tensor& x, const LstmCell& cell,
                       bool forward) const;

  RecurrentConfig cfg_;
  const Parameter* emb_ = nullptr;
  std::vector<LstmCell> fwd_, bwd_;
};

}  // namespace latsa
