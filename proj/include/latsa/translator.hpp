#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latsa/encoder.hpp"
#include "latsa/lattice.hpp"
#include "latsa/parameters.hpp"
#include "latsa/recurrent.hpp"
#include "latsa/tensor.hpp"
#include "latsa/vocab.hpp"

namespace latsa {

enum class EncoderKind { self_attention, lattice_recurrent };
const char* to_string(EncoderKind k);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::self_attention;
  EncoderConfig attention;
  RecurrentConfig recurrent;
  std::size_t d_embed = 64;   // target embeddings
  std::size_t d_hidden = 64;  // decoder LSTM
  double decoder_dropout = 0.5;
  double label_smoothing = 0.1;

  std::size_t encoder_dim() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct AttentionResult {
  Tensor context;               // 1 x d_enc
  std::vector<double> weights;  // |V|
};

/// Lattice-biased dot-product attention: weights are proportional to
/// exp(query . enc_j + log marginal_j).
AttentionResult cross_attention(const Tensor& query, const Tensor& enc, std::span<const double> log_marginals);

struct DecoderState {
  Tensor h, c;  // 1 x d_hidden
  Tensor feed;  // 1 x d_enc, previous attention context
};

struct StepOutput {
  DecoderState state;
  Tensor logits;  // 1 x |target vocab|
  std::vector<double> attention;
};

/// Lattice encoder + LSTM decoder with input feeding.
class TranslationModel {
public:
  TranslationModel(ModelConfig cfg, Vocab source, Vocab target, std::uint64_t seed = 1);

  const ModelConfig& config() const { return cfg_; }
  const Vocab& source_vocab() const { return src_; }
  const Vocab& target_vocab() const { return tgt_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  /// Vocabulary ids, positions, masks and marginals for one source lattice.
  PreparedLattice prepare(const Lattice& l) const;

  Tensor encode(const PreparedLattice& src, Mode mode, Rng* rng) const;
  DecoderState initial_state(const Tensor& enc) const;
  StepOutput decode_step(const DecoderState& state, std::size_t prev_token, const Tensor& enc,
                         std::span<const double> log_marginals, Mode mode, Rng* rng) const;

  /// Teacher-forced logits, one row per target token plus the final </s>.
  Tensor teacher_forced_logits(const PreparedLattice& src, std::span<const std::size_t> target, Mode mode,
                               Rng* rng) const;

  /// Summed label-smoothed cross-entropy of `target` followed by </s>.
  Tensor loss(const PreparedLattice& src, std::span<const std::size_t> target, Mode mode, Rng* rng) const;

  /// Beam search with scores divided by hypothesis length (including </s>).
  /// beam = 1 is greedy decoding. Output length is capped at 2|V| + 8.
  std::vector<std::size_t> translate(const PreparedLattice& src, std::size_t beam = 1) const;
  std::vector<std::string> translate_tokens(const Lattice& l, std::size_t beam = 1) const;

  nlohmann::json manifest() const;
  void save(const std::string& path) const;
  static TranslationModel load(const std::string& path);

private:
  ModelConfig cfg_;
  Vocab src_, tgt_;
  ParameterStore store_;
  std::unique_ptr<EncoderStack> attention_;
  std::unique_ptr<RecurrentLatticeEncoder> recurrent_;
  LstmCell cell_;
  const Parameter* emb_ = nullptr;
  const Parameter* init_w_ = nullptr;
  const Parameter* init_b_ = nullptr;
  const Parameter* att_w_ = nullptr;
  const Parameter* out_w_ = nullptr;
  const Parameter* out_b_ = nullptr;
};

}  // namespace latsa
