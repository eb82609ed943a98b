#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "latsa/training.hpp"

using namespace latsa;

namespace {

ModelConfig copy_config() {
  ModelConfig c;
  c.attention.d_model = 16;
  c.attention.n_heads = 2;
  c.attention.n_layers = 1;
  c.attention.d_ff = 32;
  c.attention.dropout = 0.0;
  c.d_embed = 16;
  c.d_hidden = 32;
  c.decoder_dropout = 0.0;
  c.label_smoothing = 0.0;
  return c;
}

struct CopyTask {
  Vocab src, tgt;
  std::vector<Lattice> lattices;
  std::vector<TokenSeq> targets;
};

CopyTask copy_task(std::size_t n, std::uint64_t seed) {
  CopyTask t;
  Rng rng(seed);
  for (int i = 0; i < 8; ++i) {
    t.src.add("s" + std::to_string(i));
    t.tgt.add("t" + std::to_string(i));
  }
  for (std::size_t s = 0; s < n; ++s) {
    TokenSeq src, tgt;
    const std::size_t len = 2 + rng.below(4);
    for (std::size_t i = 0; i < len; ++i) {
      const auto k = std::to_string(rng.below(8));
      src.push_back("s" + k);
      tgt.push_back("t" + k);
    }
    t.lattices.push_back(from_sequence(src));
    t.targets.push_back(tgt);
  }
  return t;
}

double max_abs_diff(const Gradients& a, const Gradients& b) {
  double m = 0;
  for (const auto& [p, g] : a.entries()) {
    const auto* o = b.find(*p);
    REQUIRE(o);
    for (std::size_t i = 0; i < g.size(); ++i) m = std::max(m, std::abs(g[i] - (*o)[i]));
  }
  return m;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("micro-batches add up to the full batch, on any thread count") {
    const CopyTask task = copy_task(16, 1);
    ModelConfig cfg = copy_config();
    cfg.attention.dropout = 0.2;
    cfg.decoder_dropout = 0.3;
    cfg.label_smoothing = 0.1;
    const TranslationModel model(cfg, task.src, task.tgt);
    const auto data = make_examples(model, task.lattices, task.targets);
    std::vector<std::size_t> all(16), first(8), second(8);
    for (std::size_t i = 0; i < 16; ++i) all[i] = i;
    for (std::size_t i = 0; i < 8; ++i) first[i] = i, second[i] = 8 + i;
    const Rng key(99);
    const Gradients whole = batch_gradients(model, data, all, key);
    Gradients parts = batch_gradients(model, data, first, key);
    parts.accumulate(batch_gradients(model, data, second, key));
    CHECK(max_abs_diff(whole, parts) <= 1e-10);

    const int threads = omp_get_max_threads();
    omp_set_num_threads(1);
    const Gradients serial = batch_gradients(model, data, all, key);
    omp_set_num_threads(std::max(threads, 4));
    const Gradients parallel = batch_gradients(model, data, all, key);
    omp_set_num_threads(threads);
    CHECK(max_abs_diff(serial, parallel) == 0.0);
  }

  TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    c.warmup_steps = 100;
    const double peak = learning_rate(c, 100, 64);
    CHECK(peak == doctest::Approx(std::pow(64.0, -0.5) * std::pow(100.0, -0.5)));
    CHECK(learning_rate(c, 50, 64) == doctest::Approx(peak / 2));
    CHECK(learning_rate(c, 400, 64) == doctest::Approx(peak / 2));
    c.lr_policy = LrPolicy::fixed;
    CHECK(learning_rate(c, 7, 64) == 1e-4);
  }

  TEST_CASE("empty data and non-finite losses are reported") {
    const CopyTask task = copy_task(4, 2);
    TranslationModel model(copy_config(), task.src, task.tgt);
    const auto data = make_examples(model, task.lattices, task.targets);
    TrainConfig c;
    c.max_epochs = 1;
    CHECK_THROWS_AS(train(model, {}, data, c), std::invalid_argument);
    model.parameters().at("dec.out.b").value()[3] = std::nan("");
    CHECK_THROWS_AS(train(model, data, data, c), TrainingDiverged);
  }

  TEST_CASE("training is reproducible and learns a copy task") {
    const CopyTask task = copy_task(50, 3);
    const auto log = (std::filesystem::temp_directory_path() / "latsa_train_log.jsonl").string();
    std::filesystem::remove(log);
    TrainConfig c;
    c.lr_policy = LrPolicy::fixed;
    c.fixed_lr = 3e-3;
    c.batch_sentences = 10;
    c.max_epochs = 30;
    c.patience = 30;
    c.select_by = Selection::accuracy;
    c.log_path = log;

    TranslationModel a(copy_config(), task.src, task.tgt, 7);
    const auto data = make_examples(a, task.lattices, task.targets);
    const TrainResult ra = train(a, data, data, c);
    CHECK(teacher_forced_accuracy(a, data) >= 0.99);
    CHECK(evaluate(a, data).token_accuracy >= 0.95);

    std::ifstream in(log);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("loss"));
      CHECK(j.contains("val_bleu"));
      CHECK(j.contains("lr"));
      ++lines;
    }
    CHECK(lines == ra.epochs.size());

    c.log_path.clear();
    c.max_epochs = 3;
    TranslationModel b1(copy_config(), task.src, task.tgt, 7), b2(copy_config(), task.src, task.tgt, 7);
    const TrainResult r1 = train(b1, data, data, c);
    const TrainResult r2 = train(b2, data, data, c);
    for (std::size_t e = 0; e < r1.epochs.size(); ++e) CHECK(r1.epochs[e].loss == r2.epochs[e].loss);
    for (std::size_t i = 0; i < b1.parameters().size(); ++i)
      CHECK(b1.parameters()[i].value() == b2.parameters()[i].value());
    std::filesystem::remove(log);
  }
}
