#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "latsa/metrics.hpp"
#include "latsa/parameters.hpp"
#include "latsa/translator.hpp"

namespace latsa {

struct Example {
  PreparedLattice source;
  std::vector<std::size_t> target;  // target vocabulary ids, no </s>
  TokenSeq reference;
};

std::vector<Example> make_examples(const TranslationModel& model, const std::vector<Lattice>& sources,
                                   const std::vector<TokenSeq>& targets);

/// Greedy (beam = 1) or beam decoding of every example, scored against its
/// reference. Sentences are decoded in parallel; results do not depend on the
/// thread count.
EvalResult evaluate(const TranslationModel& model, const std::vector<Example>& data, std::size_t beam = 1);
std::vector<TokenSeq> translate_all(const TranslationModel& model, const std::vector<Example>& data,
                                    std::size_t beam = 1);

/// Fraction of target tokens (including </s>) whose teacher-forced argmax is correct.
double teacher_forced_accuracy(const TranslationModel& model, const std::vector<Example>& data);

enum class Phase { pretrain_sequential, finetune_lattice };
enum class LrPolicy { warmup_decay, fixed };
enum class Selection { bleu, accuracy };

const char* to_string(Phase p);
const char* to_string(LrPolicy p);

struct TrainConfig {
  Phase phase = Phase::finetune_lattice;
  AdamConfig adam;
  LrPolicy lr_policy = LrPolicy::warmup_decay;
  std::size_t warmup_steps = 4000;
  double lr_factor = 1.0;  // multiplies the warm-up/decay curve
  double fixed_lr = 1e-4;
  std::size_t batch_sentences = 16;
  std::size_t accumulation = 1;  // micro-batches per update
  std::size_t max_epochs = 100;
  std::size_t patience = 15;
  Selection select_by = Selection::bleu;
  std::uint64_t seed = 1;
  std::string log_path;         // JSON lines, appended; empty disables
  std::string checkpoint_path;  // best model; empty disables

  nlohmann::json to_json() const;
};

/// d^-0.5 * min(step^-0.5, step * warmup^-1.5) * factor, or the fixed rate.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t d_model);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;  // mean summed loss per sentence
  EvalResult validation;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  EvalResult best;
  bool early_stopped = false;
};

class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Summed gradients of the summed loss over data[indices]. Each sentence gets
/// its own dropout stream derived from (key, index), and per-sentence
/// gradients are reduced in index order, so the result is independent of
/// threading.
Gradients batch_gradients(const TranslationModel& model, const std::vector<Example>& data,
                          std::span<const std::size_t> indices, Rng key, double* loss_sum = nullptr);

/// Trains until max_epochs or until validation has not improved for
/// `patience` epochs, then restores the best parameters.
TrainResult train(TranslationModel& model, const std::vector<Example>& train_set,
                  const std::vector<Example>& valid_set, const TrainConfig& cfg);

}  // namespace latsa
