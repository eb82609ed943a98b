#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "latsa/synth.hpp"
#include "latsa/translator.hpp"

namespace latsa {

enum class BenchPhase { train_step, inference };
const char* to_string(BenchPhase p);

struct BenchReport {
  EncoderKind encoder = EncoderKind::self_attention;
  BenchPhase phase = BenchPhase::train_step;
  double words_per_second = 0.0;  // source tokens per second, mean over runs
  std::vector<double> run_words_per_second;
  double lattice_density = 0.0;  // lattice nodes per source token
  std::size_t runs = 0;
  std::size_t sentences = 0;
  std::string hardware;

  nlohmann::json to_json() const;
};

struct BenchOptions {
  std::size_t runs = 3;
  std::size_t max_sentences = 100;
  std::uint64_t seed = 1;
};

/// One description of the machine: CPU model, logical cores, OpenMP threads.
std::string hardware_descriptor();

/// Words/sec of a full model in unbatched train steps (forward, backward and
/// an Adam update per sentence) or greedy inference, on one worker thread.
/// Mask and marginal precomputation happens before timing starts.
BenchReport bench_model(const ModelConfig& cfg, const SynthCorpus& corpus, BenchPhase phase,
                        const BenchOptions& opt = {});

struct ScalingReport {
  std::vector<std::size_t> sizes;
  std::vector<double> seconds;  // per mask computation (forward + backward)
  double exponent = 0.0;        // least-squares slope of log time on log size
  std::string shape;

  nlohmann::json to_json() const;
};

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Times serial probabilistic mask computation on chains ("chain") or
/// width-3 sausage lattices ("sausage") with the given node counts.
ScalingReport mask_scaling(const std::vector<std::size_t>& sizes, const std::string& shape = "chain",
                           double min_seconds = 0.2);

}  // namespace latsa
