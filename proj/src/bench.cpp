#include "latsa/bench.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "latsa/masks.hpp"
#include "latsa/parameters.hpp"
#include "latsa/training.hpp"

namespace latsa {

const char* to_string(BenchPhase p) { return p == BenchPhase::train_step ? "train_step" : "inference"; }

nlohmann::json BenchReport::to_json() const {
  return {{"encoder", to_string(encoder)},
          {"phase", to_string(phase)},
          {"words_per_second", words_per_second},
          {"run_words_per_second", run_words_per_second},
          {"lattice_density", lattice_density},
          {"runs", runs},
          {"sentences", sentences},
          {"hardware", hardware}};
}

nlohmann::json ScalingReport::to_json() const {
  return {{"shape", shape}, {"sizes", sizes}, {"seconds", seconds}, {"exponent", exponent}};
}

std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream cpu("/proc/cpuinfo");
  for (std::string line; std::getline(cpu, line);)
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 2);
      break;
    }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " logical cores, " +
         std::to_string(omp_get_max_threads()) + " OpenMP threads";
}

namespace {

using Clock = std::chrono::steady_clock;

// Restores the OpenMP thread count on scope exit.
struct OneWorker {
  int saved = omp_get_max_threads();
  OneWorker() { omp_set_num_threads(1); }
  ~OneWorker() { omp_set_num_threads(saved); }
};

}  // namespace

BenchReport bench_model(const ModelConfig& cfg, const SynthCorpus& corpus, BenchPhase phase,
                        const BenchOptions& opt) {
  BenchReport r;
  r.encoder = cfg.encoder;
  r.phase = phase;
  r.hardware = hardware_descriptor();
  r.runs = opt.runs;

  std::vector<std::vector<std::string>> src, tgt;
  for (const auto& s : corpus.sentences) {
    src.push_back(s.lattice.tokens());
    tgt.push_back(s.target);
  }
  TranslationModel model(cfg, Vocab::build(src), Vocab::build(tgt), opt.seed);
  const std::size_t n = std::min(opt.max_sentences, corpus.sentences.size());
  std::vector<Lattice> lats;
  std::vector<TokenSeq> targets;
  std::size_t words = 0, nodes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    lats.push_back(corpus.sentences[i].lattice);
    targets.push_back(corpus.sentences[i].target);
    words += corpus.sentences[i].source.size();
    nodes += corpus.sentences[i].lattice.size() - 2;
  }
  r.sentences = n;
  r.lattice_density = words ? static_cast<double>(nodes) / static_cast<double>(words) : 0.0;
  const std::vector<Example> data = make_examples(model, lats, targets);

  OneWorker pin;
  Adam adam;
  const Rng root(opt.seed);
  for (std::size_t run = 0; run < opt.runs; ++run) {
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < n; ++i) {
      if (phase == BenchPhase::train_step) {
        Rng rng = root.split(run * n + i);
        Gradients g = backward(model.loss(data[i].source, data[i].target, Mode::train, &rng));
        adam.step(model.parameters(), g, 1e-4);
      } else {
        (void)model.translate(data[i].source, 1);
      }
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    r.run_words_per_second.push_back(static_cast<double>(words) / secs);
  }
  double sum = 0.0;
  for (double w : r.run_words_per_second) sum += w;
  r.words_per_second = r.runs ? sum / static_cast<double>(r.runs) : 0.0;
  return r;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope needs two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace {

Lattice scaling_lattice(std::size_t nodes, const std::string& shape) {
  if (shape == "chain") return from_sequence(std::vector<std::string>(nodes - 2, "w"));
  if (shape != "sausage") throw std::invalid_argument("unknown lattice shape '" + shape + "'");
  // Slots of three alternatives between <s> and </s>.
  std::vector<std::string> tokens{kStartToken};
  std::vector<Edge> edges;
  std::vector<NodeId> prev{0};
  while (tokens.size() + 3 < nodes) {
    std::vector<NodeId> slot;
    for (int k = 0; k < 3; ++k) {
      const NodeId id = tokens.size();
      tokens.push_back("w");
      for (NodeId p : prev) edges.push_back({p, id, 1.0 / 3.0});
      slot.push_back(id);
    }
    prev = std::move(slot);
  }
  const NodeId end = tokens.size();
  tokens.push_back(kEndToken);
  for (NodeId p : prev) edges.push_back({p, end, 1.0});
  return Lattice(std::move(tokens), std::move(edges), 0, end);
}

}  // namespace

ScalingReport mask_scaling(const std::vector<std::size_t>& sizes, const std::string& shape, double min_seconds) {
  ScalingReport r;
  r.shape = shape;
  std::vector<double> xs;
  for (std::size_t n : sizes) {
    const Lattice l = scaling_lattice(n, shape);
    std::size_t reps = 0;
    const auto t0 = Clock::now();
    double secs = 0.0;
    do {
      MaskPair m = prob_masks(l, Execution::serial);
      (void)m;
      ++reps;
      secs = std::chrono::duration<double>(Clock::now() - t0).count();
    } while (secs < min_seconds);
    r.sizes.push_back(l.size());
    xs.push_back(static_cast<double>(l.size()));
    r.seconds.push_back(secs / static_cast<double>(reps));
  }
  r.exponent = loglog_slope(xs, r.seconds);
  return r;
}

}  // namespace latsa
