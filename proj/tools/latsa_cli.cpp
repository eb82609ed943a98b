// latsa: command-line workbench for lattice self-attention.
//
// Exit status: 0 success, 1 invalid input or runtime failure, 2 usage error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "latsa/bench.hpp"
#include "latsa/lattice.hpp"
#include "latsa/lattice_io.hpp"
#include "latsa/masks.hpp"
#include "latsa/synth.hpp"
#include "latsa/training.hpp"
#include "latsa/translator.hpp"

using namespace latsa;

namespace {

struct InputOptions {
  std::string path = "-";
  std::string format = "json";
  std::string plf_prob = "linear";
};

void add_input(CLI::App* app, InputOptions& in) {
  app->add_option("input", in.path, "Lattice file, one lattice per line or a single JSON document ('-' for stdin)");
  app->add_option("--format", in.format, "Input format")->check(CLI::IsMember({"json", "plf"}));
  app->add_option("--plf-prob", in.plf_prob, "How PLF edge scores are read")->check(CLI::IsMember({"linear", "log"}));
}

std::string slurp(const std::string& path) {
  std::stringstream ss;
  if (path == "-") {
    ss << std::cin.rdbuf();
  } else {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    ss << is.rdbuf();
  }
  return ss.str();
}

std::vector<Lattice> read_lattices(const InputOptions& in) {
  return parse_lattices(slurp(in.path), in.format == "plf" ? LatticeFormat::plf : LatticeFormat::json,
                        in.plf_prob == "log" ? PlfProb::log : PlfProb::linear);
}

std::string fmt(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Source side of a corpus as lattices: the lattices themselves, or chains
// built from the 1-best or oracle token files.
std::vector<Lattice> source_side(const CorpusFiles& c, const std::string& which) {
  if (which == "lattice") return c.lattices;
  const auto& seqs = which == "1best" ? c.one_best : c.oracle;
  std::vector<Lattice> out;
  for (const auto& s : seqs) out.push_back(from_sequence(s));
  return out;
}

struct TrainOptions {
  std::string train_prefix, valid_prefix, model_path, init_path, log_path, source = "lattice";
  std::string encoder = "self_attention", mask = "probabilistic", direction = "directional",
              positions = "longest_path", lr_policy = "warmup_decay", select = "accuracy";
  std::size_t d_model = 64, heads = 4, layers = 3, d_ff = 256, d_hidden = 64, epochs = 100, patience = 15,
              batch = 16, warmup = 4000, rnn_hidden = 32;
  double dropout = 0.1, decoder_dropout = 0.5, smoothing = 0.1, lr_factor = 1.0, fixed_lr = 1e-4;
  std::uint64_t seed = 1;
};

ModelConfig model_config(const TrainOptions& o) {
  ModelConfig c;
  c.encoder = o.encoder == "self_attention" ? EncoderKind::self_attention : EncoderKind::lattice_recurrent;
  c.attention = EncoderConfig::from_json({{"d_model", o.d_model},
                                          {"n_heads", o.heads},
                                          {"n_layers", o.layers},
                                          {"d_ff", o.d_ff},
                                          {"dropout", o.dropout},
                                          {"mask_kind", o.mask},
                                          {"direction", o.direction},
                                          {"positions", o.positions}});
  c.recurrent.d_embed = o.d_model;
  c.recurrent.d_hidden = o.rnn_hidden;
  c.recurrent.dropout = o.dropout;
  c.d_embed = o.d_model;
  c.d_hidden = o.d_hidden;
  c.decoder_dropout = o.decoder_dropout;
  c.label_smoothing = o.smoothing;
  return c;
}

int run_train(const TrainOptions& o) {
  const CorpusFiles tr = read_corpus(o.train_prefix);
  const std::vector<Lattice> tr_src = source_side(tr, o.source);

  Vocab sv, tv;
  std::unique_ptr<TranslationModel> init;
  if (!o.init_path.empty()) {
    init = std::make_unique<TranslationModel>(TranslationModel::load(o.init_path));
    sv = init->source_vocab();
    tv = init->target_vocab();
  } else {
    std::vector<TokenSeq> s, t;
    for (const auto& l : tr.lattices) s.push_back(l.tokens());
    for (const auto& seq : tr.oracle) s.push_back(seq);
    sv = Vocab::build(s);
    tv = Vocab::build(tr.target);
  }
  TranslationModel model(model_config(o), sv, tv, o.seed);
  if (init) model.parameters().copy_values_from(init->parameters());

  TrainConfig tc;
  tc.phase = o.source == "lattice" ? Phase::finetune_lattice : Phase::pretrain_sequential;
  tc.lr_policy = o.lr_policy == "fixed" ? LrPolicy::fixed : LrPolicy::warmup_decay;
  tc.warmup_steps = o.warmup;
  tc.lr_factor = o.lr_factor;
  tc.fixed_lr = o.fixed_lr;
  tc.batch_sentences = o.batch;
  tc.max_epochs = o.epochs;
  tc.patience = o.patience;
  tc.select_by = o.select == "bleu" ? Selection::bleu : Selection::accuracy;
  tc.seed = o.seed;
  tc.log_path = o.log_path;
  tc.checkpoint_path = o.model_path;

  const auto train_set = make_examples(model, tr_src, tr.target);
  std::vector<Example> valid_set;
  if (!o.valid_prefix.empty()) {
    const CorpusFiles va = read_corpus(o.valid_prefix);
    valid_set = make_examples(model, source_side(va, o.source), va.target);
  }
  const TrainResult r = train(model, train_set, valid_set, tc);
  model.save(o.model_path);
  std::cout << nlohmann::json{{"best_epoch", r.best_epoch},
                              {"epochs", r.epochs.size()},
                              {"early_stopped", r.early_stopped},
                              {"val_accuracy", r.best.token_accuracy},
                              {"val_bleu", r.best.bleu}}
                   .dump()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice self-attention workbench"};
  app.require_subcommand(1);

  InputOptions in;

  auto* validate = app.add_subcommand("validate", "Check lattices and report their size");
  add_input(validate, in);

  std::string mask_kind = "prob", mask_dir = "fwd";
  auto* masks = app.add_subcommand("masks", "Print an attention mask as TSV");
  add_input(masks, in);
  masks->add_option("--kind", mask_kind, "Mask kind")->check(CLI::IsMember({"bin", "prob"}));
  masks->add_option("--dir", mask_dir, "Mask direction")->check(CLI::IsMember({"fwd", "bwd", "nondir"}));

  std::string pos_scheme = "longest";
  auto* positions = app.add_subcommand("positions", "Print node positions in id order");
  add_input(positions, in);
  positions->add_option("--scheme", pos_scheme, "Position scheme")->check(CLI::IsMember({"longest", "topo"}));

  auto* marginals = app.add_subcommand("marginals", "Print node marginals in id order");
  add_input(marginals, in);

  auto* linearize_cmd = app.add_subcommand("linearize", "Print id and token in topological order");
  add_input(linearize_cmd, in);

  auto* dot = app.add_subcommand("dot", "Export Graphviz DOT");
  add_input(dot, in);

  SynthConfig sc;
  std::string out_prefix;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic noisy-lattice corpus");
  gen->add_option("--seed", sc.seed);
  gen->add_option("--language-seed", sc.language_seed, "Grammar/mapping seed shared across splits");
  gen->add_option("-n,--sentences", sc.n_sentences);
  gen->add_option("--width", sc.confusion_width, "Maximum alternatives per slot");
  gen->add_option("--margin", sc.noise_margin, "Near-tie band in which the 1-best may be wrong");
  gen->add_option("--min-length", sc.min_length);
  gen->add_option("--max-length", sc.max_length);
  gen->add_option("--vocab", sc.vocab);
  gen->add_option("-o,--out", out_prefix, "Output prefix")->required();

  TrainOptions to;
  auto* trn = app.add_subcommand("train", "Train a translation model on a generated corpus");
  trn->add_option("--train", to.train_prefix, "Training corpus prefix")->required();
  trn->add_option("--valid", to.valid_prefix, "Validation corpus prefix");
  trn->add_option("-m,--model", to.model_path, "Checkpoint to write")->required();
  trn->add_option("--init", to.init_path, "Start from this checkpoint (finetuning)");
  trn->add_option("--source", to.source, "Source side")->check(CLI::IsMember({"lattice", "1best", "oracle"}));
  trn->add_option("--encoder", to.encoder)->check(CLI::IsMember({"self_attention", "lattice_recurrent"}));
  trn->add_option("--mask", to.mask)->check(CLI::IsMember({"binary", "probabilistic", "none"}));
  trn->add_option("--direction", to.direction)->check(CLI::IsMember({"directional", "nondirectional"}));
  trn->add_option("--positions", to.positions)->check(CLI::IsMember({"longest_path", "topological", "none"}));
  trn->add_option("--d-model", to.d_model);
  trn->add_option("--heads", to.heads);
  trn->add_option("--layers", to.layers);
  trn->add_option("--d-ff", to.d_ff);
  trn->add_option("--d-hidden", to.d_hidden, "Decoder LSTM size");
  trn->add_option("--rnn-hidden", to.rnn_hidden, "Recurrent encoder size per direction");
  trn->add_option("--dropout", to.dropout);
  trn->add_option("--decoder-dropout", to.decoder_dropout);
  trn->add_option("--label-smoothing", to.smoothing);
  trn->add_option("--lr-policy", to.lr_policy)->check(CLI::IsMember({"warmup_decay", "fixed"}));
  trn->add_option("--lr-factor", to.lr_factor);
  trn->add_option("--fixed-lr", to.fixed_lr);
  trn->add_option("--warmup", to.warmup);
  trn->add_option("--batch", to.batch);
  trn->add_option("--epochs", to.epochs);
  trn->add_option("--patience", to.patience);
  trn->add_option("--select", to.select)->check(CLI::IsMember({"bleu", "accuracy"}));
  trn->add_option("--seed", to.seed);
  trn->add_option("--log", to.log_path, "Append JSON-lines training log here");

  std::string model_path;
  std::size_t beam = 8;
  auto* translate = app.add_subcommand("translate", "Translate lattices, one output line each");
  add_input(translate, in);
  translate->add_option("-m,--model", model_path)->required();
  translate->add_option("--beam", beam);

  std::string eval_prefix, eval_source = "lattice";
  auto* eval = app.add_subcommand("eval", "Token accuracy and BLEU on a generated corpus");
  eval->add_option("-m,--model", model_path)->required();
  eval->add_option("--data", eval_prefix, "Corpus prefix")->required();
  eval->add_option("--source", eval_source)->check(CLI::IsMember({"lattice", "1best", "oracle"}));
  eval->add_option("--beam", beam);

  BenchOptions bo;
  std::size_t bench_sentences = 100;
  auto* bench = app.add_subcommand("bench", "Words/sec of both encoders and mask-DP scaling, as JSON");
  bench->add_option("--runs", bo.runs);
  bench->add_option("--sentences", bench_sentences);
  bench->add_option("--seed", bo.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*validate) {
      const auto ls = read_lattices(in);
      for (const auto& l : ls) std::cout << "ok\t" << l.size() << " nodes\t" << l.edges().size() << " edges\n";
    } else if (*masks) {
      for (const auto& l : read_lattices(in)) {
        const MaskPair p = mask_kind == "bin" ? binary_masks(l) : prob_masks(l);
        const MaskMatrix m = mask_dir == "fwd" ? p.fwd : mask_dir == "bwd" ? p.bwd : merge_nondirectional(p.fwd, p.bwd);
        std::cout << to_tsv(m);
      }
    } else if (*positions) {
      for (const auto& l : read_lattices(in)) {
        const auto pos = pos_scheme == "longest" ? longest_path_positions(l) : topological_positions(l);
        for (std::size_t i = 0; i < pos.size(); ++i) std::cout << (i ? " " : "") << pos[i];
        std::cout << '\n';
      }
    } else if (*marginals) {
      for (const auto& l : read_lattices(in)) {
        const auto m = compute_marginals(l);
        for (std::size_t i = 0; i < m.size(); ++i) std::cout << (i ? "\t" : "") << fmt(m[i]);
        std::cout << '\n';
      }
    } else if (*linearize_cmd) {
      for (const auto& l : read_lattices(in))
        for (const auto& [tok, id] : linearize(l)) std::cout << id << '\t' << tok << '\n';
    } else if (*dot) {
      for (const auto& l : read_lattices(in)) std::cout << to_dot(l);
    } else if (*gen) {
      const SynthCorpus c = generate(sc);
      write_corpus(c, out_prefix);
      std::cout << nlohmann::json{{"config", sc.to_json()},
                                  {"one_best_error_rate", c.one_best_error_rate()},
                                  {"density", c.density()}}
                       .dump()
                << '\n';
    } else if (*trn) {
      return run_train(to);
    } else if (*translate) {
      const TranslationModel m = TranslationModel::load(model_path);
      for (const auto& l : read_lattices(in)) std::cout << join(m.translate_tokens(l, beam)) << '\n';
    } else if (*eval) {
      const TranslationModel m = TranslationModel::load(model_path);
      const CorpusFiles c = read_corpus(eval_prefix);
      const EvalResult r = evaluate(m, make_examples(m, source_side(c, eval_source), c.target), beam);
      std::cout << nlohmann::json{{"token_accuracy", r.token_accuracy}, {"bleu", r.bleu}}.dump() << '\n';
    } else if (*bench) {
      SynthConfig bsc;
      bsc.seed = bo.seed;
      bsc.n_sentences = bench_sentences;
      bo.max_sentences = bench_sentences;
      const SynthCorpus c = generate(bsc);
      ModelConfig sa;
      sa.attention.d_model = 32;
      sa.attention.d_ff = 64;
      sa.attention.n_layers = 2;
      sa.d_embed = sa.d_hidden = 32;
      ModelConfig rnn = sa;
      rnn.encoder = EncoderKind::lattice_recurrent;
      rnn.recurrent.d_embed = 32;
      rnn.recurrent.d_hidden = 16;
      nlohmann::json out = {{"reports", nlohmann::json::array()}};
      for (const auto* cfg : {&sa, &rnn})
        for (BenchPhase ph : {BenchPhase::train_step, BenchPhase::inference})
          out["reports"].push_back(bench_model(*cfg, c, ph, bo).to_json());
      out["mask_scaling"] = mask_scaling({100, 200, 400, 800}, "chain").to_json();
      std::cout << out.dump(2) << '\n';
    }
  } catch (const LatticeError& e) {
    std::cerr << "error: " << e.what() << " [" << to_string(e.kind()) << "]\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
