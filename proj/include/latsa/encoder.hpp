#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latsa/lattice.hpp"
#include "latsa/masks.hpp"
#include "latsa/parameters.hpp"
#include "latsa/tensor.hpp"
#include "latsa/vocab.hpp"

namespace latsa {

enum class EncoderMask { binary, probabilistic, none };
enum class PositionScheme { longest_path, topological, none };

const char* to_string(EncoderMask m);
const char* to_string(PositionScheme p);
const char* to_string(HeadStrategy s);

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 3;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  EncoderMask mask_kind = EncoderMask::probabilistic;
  HeadStrategy direction = HeadStrategy::directional;
  PositionScheme positions = PositionScheme::longest_path;
  std::size_t max_position = 128;
  /// Scale attention scores by 1/sqrt(d_model / n_heads); otherwise 1/sqrt(d_model).
  bool scale_by_head_dim = true;

  std::size_t head_dim() const { return d_model / n_heads; }
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// A lattice with everything the encoders need precomputed: vocabulary ids,
/// positions, per-head masks and marginals. Built once at data-loading time.
struct PreparedLattice {
  std::shared_ptr<const Lattice> lattice;
  std::vector<std::size_t> token_ids;
  PositionVector positions;
  std::vector<std::shared_ptr<const MaskMatrix>> head_masks;
  MarginalVector marginals;
  std::vector<double> log_marginals;  // 1 x |V| additive cross-attention bias

  std::size_t size() const { return token_ids.size(); }
};

PreparedLattice prepare_lattice(const Lattice& l, const Vocab& vocab, const EncoderConfig& cfg);

/// Attention weights recorded per layer and head, each |V| x |V| row-major.
struct AttentionTrace {
  std::vector<std::vector<std::vector<double>>> weights;  // [layer][head]
  std::size_t n = 0;
};

/// Tab-separated dump: one "# layer L head H" header then |V| rows per head.
std::string to_tsv(const AttentionTrace& trace);

struct EncoderLayerParams {
  const Parameter* wqkv = nullptr;  // d_model x 3 d_model: [Q heads | K heads | V heads]
  const Parameter* ln1_gain = nullptr;
  const Parameter* ln1_bias = nullptr;
  const Parameter* ff_w1 = nullptr;
  const Parameter* ff_b1 = nullptr;
  const Parameter* ff_w2 = nullptr;
  const Parameter* ff_b2 = nullptr;
  const Parameter* ln2_gain = nullptr;
  const Parameter* ln2_bias = nullptr;
};

/// Masked multi-head self-attention encoder over lattices.
class EncoderStack {
public:
  /// Registers parameters named "<prefix>.tok_emb", "<prefix>.pos_emb" and
  /// "<prefix>.layer<L>.{Wqkv, ln1.*, ff.*, ln2.*}". Column block
  /// h * d/n of Wqkv is head h's query projection, d + h * d/n its key and
  /// 2d + h * d/n its value projection.
  EncoderStack(const EncoderConfig& cfg, std::size_t vocab_size, ParameterStore& store, Rng& rng,
               const std::string& prefix = "enc");

  const EncoderConfig& config() const { return cfg_; }

  /// x'_i = dropout(E_tok[x_i] + E_pos[pos_i]).
  Tensor embed_inputs(const PreparedLattice& in, Mode mode, Rng* rng) const;

  /// One Transformer layer: per-head masked attention, concat, then
  /// L = LN[dropout(H) + x] and Y = LN[dropout(FF(L)) + L].
  Tensor encoder_layer(std::size_t layer, const Tensor& x, const std::vector<const MaskMatrix*>& masks, Mode mode,
                       Rng* rng, AttentionTrace* trace = nullptr) const;

  Tensor encode(const PreparedLattice& in, Mode mode, Rng* rng, AttentionTrace* trace = nullptr) const;

private:
  EncoderConfig cfg_;
  const Parameter* tok_emb_ = nullptr;
  const Parameter* pos_emb_ = nullptr;
  std::vector<EncoderLayerParams> layers_;
};

}  // namespace latsa
