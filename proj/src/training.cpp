#include "latsa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>

namespace latsa {

const char* to_string(Phase p) {
  return p == Phase::pretrain_sequential ? "pretrain_sequential" : "finetune_lattice";
}

const char* to_string(LrPolicy p) { return p == LrPolicy::warmup_decay ? "warmup_decay" : "fixed"; }

std::vector<Example> make_examples(const TranslationModel& model, const std::vector<Lattice>& sources,
                                   const std::vector<TokenSeq>& targets) {
  if (sources.size() != targets.size())
    throw std::invalid_argument(std::to_string(sources.size()) + " sources for " + std::to_string(targets.size()) +
                                " targets");
  std::vector<Example> out(sources.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::size_t i = 0; i < sources.size(); ++i) {
    out[i].source = model.prepare(sources[i]);
    out[i].target = model.target_vocab().ids(targets[i]);
    out[i].reference = targets[i];
  }
  return out;
}

namespace {

// Runs body(i) for i in [0, n) across threads and rethrows the first failure.
template <class F>
void parallel_for(std::size_t n, F body) {
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(latsa_parallel_for)
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace

std::vector<TokenSeq> translate_all(const TranslationModel& model, const std::vector<Example>& data,
                                    std::size_t beam) {
  std::vector<TokenSeq> hyps(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    for (std::size_t id : model.translate(data[i].source, beam)) hyps[i].push_back(model.target_vocab().token(id));
  });
  return hyps;
}

EvalResult evaluate(const TranslationModel& model, const std::vector<Example>& data, std::size_t beam) {
  std::vector<TokenSeq> refs;
  refs.reserve(data.size());
  for (const auto& e : data) refs.push_back(e.reference);
  return score(translate_all(model, data, beam), refs);
}

double teacher_forced_accuracy(const TranslationModel& model, const std::vector<Example>& data) {
  std::vector<std::size_t> hits(data.size()), totals(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    NoGradGuard guard;
    Tensor logits = model.teacher_forced_logits(data[i].source, data[i].target, Mode::infer, nullptr);
    const std::size_t v = logits.cols();
    auto vals = logits.values();
    for (std::size_t t = 0; t < logits.rows(); ++t) {
      const auto row = vals.subspan(t * v, v);
      const std::size_t arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const std::size_t gold = t < data[i].target.size() ? data[i].target[t] : Vocab::kEos;
      hits[i] += arg == gold;
    }
    totals[i] = logits.rows();
  });
  const double h = static_cast<double>(std::accumulate(hits.begin(), hits.end(), std::size_t{0}));
  const double n = static_cast<double>(std::accumulate(totals.begin(), totals.end(), std::size_t{0}));
  return n == 0 ? 1.0 : h / n;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"phase", to_string(phase)},
          {"lr_policy", to_string(lr_policy)},
          {"warmup_steps", warmup_steps},
          {"lr_factor", lr_factor},
          {"fixed_lr", fixed_lr},
          {"batch_sentences", batch_sentences},
          {"accumulation", accumulation},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"select_by", select_by == Selection::bleu ? "bleu" : "accuracy"},
          {"seed", seed},
          {"adam",
           {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}, {"clip_norm", adam.clip_norm}}}};
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t d_model) {
  if (cfg.lr_policy == LrPolicy::fixed) return cfg.fixed_lr;
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(std::max<std::size_t>(cfg.warmup_steps, 1));
  return cfg.lr_factor / std::sqrt(static_cast<double>(d_model)) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

Gradients batch_gradients(const TranslationModel& model, const std::vector<Example>& data,
                          std::span<const std::size_t> indices, Rng key, double* loss_sum) {
  std::vector<Gradients> per(indices.size());
  std::vector<double> losses(indices.size());
  parallel_for(indices.size(), [&](std::size_t b) {
    const std::size_t i = indices[b];
    Rng rng = key.split(i);
    Tensor loss = model.loss(data[i].source, data[i].target, Mode::train, &rng);
    losses[b] = loss.item();
    per[b] = backward(loss);
  });
  Gradients total;
  for (auto& g : per) total.accumulate(g);
  if (loss_sum) *loss_sum = std::accumulate(losses.begin(), losses.end(), 0.0);
  return total;
}

namespace {

double selection_metric(const EvalResult& r, Selection s) { return s == Selection::bleu ? r.bleu : r.token_accuracy; }

std::vector<std::vector<double>> snapshot(const ParameterStore& store) {
  std::vector<std::vector<double>> v;
  v.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) v.push_back(store[i].value());
  return v;
}

}  // namespace

TrainResult train(TranslationModel& model, const std::vector<Example>& train_set,
                  const std::vector<Example>& valid_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw std::invalid_argument("training corpus is empty");
  if (cfg.batch_sentences == 0 || cfg.accumulation == 0) throw std::invalid_argument("batch size must be positive");

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open training log " + cfg.log_path);
  }

  const Rng root(cfg.seed);
  ParameterStore& store = model.parameters();
  const std::size_t d_model = model.config().encoder_dim();
  Adam adam(cfg.adam);
  TrainResult result;
  double best_metric = -1.0;
  std::vector<std::vector<double>> best_params = snapshot(store);
  std::size_t since_best = 0, step = 0;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = root.split(0x5348554646ull ^ epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    const std::size_t per_update = cfg.batch_sentences * cfg.accumulation;
    for (std::size_t begin = 0; begin < order.size(); begin += per_update) {
      ++step;
      const std::size_t end = std::min(order.size(), begin + per_update);
      Gradients grads;
      double loss_sum = 0.0;
      for (std::size_t mb = begin; mb < end; mb += cfg.batch_sentences) {
        const std::size_t mb_end = std::min(end, mb + cfg.batch_sentences);
        double l = 0.0;
        grads.accumulate(batch_gradients(model, train_set,
                                         std::span<const std::size_t>(order).subspan(mb, mb_end - mb),
                                         root.split(step), &l));
        loss_sum += l;
      }
      if (!std::isfinite(loss_sum))
        throw TrainingDiverged("loss became " + std::to_string(loss_sum) + " at epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(step) + ", lr " +
                               std::to_string(learning_rate(cfg, step, d_model)));
      grads.scale(1.0 / static_cast<double>(end - begin));
      adam.step(store, grads, learning_rate(cfg, step, d_model));
      epoch_loss += loss_sum;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.loss = epoch_loss / static_cast<double>(train_set.size());
    rec.validation = valid_set.empty() ? EvalResult{} : evaluate(model, valid_set);
    rec.lr = learning_rate(cfg, step, d_model);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(rec);

    if (log) {
      log << nlohmann::json{{"phase", to_string(cfg.phase)},
                            {"epoch", rec.epoch},
                            {"step", rec.step},
                            {"loss", rec.loss},
                            {"val_accuracy", rec.validation.token_accuracy},
                            {"val_bleu", rec.validation.bleu},
                            {"lr", rec.lr},
                            {"seconds", rec.seconds}}
                 .dump()
          << '\n'
          << std::flush;
    }

    const double metric = selection_metric(rec.validation, cfg.select_by);
    if (valid_set.empty() || metric > best_metric) {
      best_metric = metric;
      best_params = snapshot(store);
      result.best_epoch = epoch;
      result.best = rec.validation;
      since_best = 0;
      if (!cfg.checkpoint_path.empty()) model.save(cfg.checkpoint_path);
    } else if (++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }

  for (std::size_t i = 0; i < store.size(); ++i) store[i].value() = best_params[i];
  return result;
}

}  // namespace latsa
