// Copyright 2026 The narmi Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line entry point: train | decode | eval | oracle.
// Exit codes: 0 success, 1 usage, 2 data error, 3 acceptance failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "narmi/oracle.hpp"
#include "narmi/run.hpp"

namespace fs = std::filesystem;
using namespace narmi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitAcceptance = 3;

struct CommonArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string mode = "nonar+mmi";
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out_path;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  if (args.seed) cfg.train_seed = *args.seed;
  if (args.lambda) cfg.decode_lambda = *args.lambda;
  return cfg;
}

struct LoadedModels {
  std::unique_ptr<NonArBundle> nonar;
  std::unique_ptr<ArBundle> ar;
};

bool wants_nonar(const RunConfig& cfg) {
  return cfg.train_models == "nonar" || cfg.train_models == "both";
}
bool wants_ar(const RunConfig& cfg) {
  return cfg.train_models == "ar" || cfg.train_models == "both";
}

LoadedModels build_models(const RunConfig& cfg, int vocab_size) {
  LoadedModels m;
  const BlockConfig block = cfg.block_config();
  if (wants_nonar(cfg)) {
    m.nonar = make_nonar_bundle(block, vocab_size, cfg.train_seed, cfg.train_lr);
  }
  if (wants_ar(cfg)) {
    m.ar = make_ar_bundle(block, vocab_size, cfg.train_seed, cfg.train_lr);
  }
  return m;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  const fs::path out_dir = args.out_path.empty() ? fs::path("out") : fs::path(args.out_path);
  fs::create_directories(out_dir);

  CorpusBundle corpus = build_corpus(cfg);
  LoadedModels models = build_models(cfg, corpus.vocab.size());

  int start_step = 0;
  if (!args.checkpoint_path.empty()) {
    start_step = load_training_checkpoint(args.checkpoint_path, models.nonar.get(),
                                          models.ar.get());
    std::cerr << "resuming from step " << start_step << "\n";
  }

  const fs::path ckpt_path = out_dir / "checkpoint.narmi";
  const fs::path log_path = out_dir / "train.log";
  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  log << "# resolved config\n" << cfg.echo() << "# training\n";

  corpus.vocab.save((out_dir / "vocab.txt").string());
  save_corpus(corpus.train, corpus.vocab, (out_dir / "train.txt").string());
  save_corpus(corpus.dev, corpus.vocab, (out_dir / "dev.txt").string());
  save_corpus(corpus.test, corpus.vocab, (out_dir / "test.txt").string());

  TrainHooks hooks;
  const bool with_ar = models.ar != nullptr;
  hooks.on_step = [&](const StepLog& s) { log << s.to_string(with_ar) << '\n'; };
  train_models(cfg, corpus.train, models.nonar.get(), models.ar.get(), start_step, hooks,
               ckpt_path.string());
  log.flush();
  std::cout << "checkpoint: " << ckpt_path.string() << "\n";
  std::cout << "log: " << log_path.string() << "\n";
  return kExitOk;
}

int cmd_decode(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  if (args.checkpoint_path.empty()) {
    std::cerr << "decode: --checkpoint is required\n";
    return kExitUsage;
  }
  DecodeMode mode = decode_mode_from_name(args.mode);
  if (mode == DecodeMode::NonAr && args.lambda) {
    std::cerr << "warning: --lambda ignored in mode nonar (forward-only decode)\n";
  }
  CorpusBundle corpus = build_corpus(cfg);
  LoadedModels models = build_models(cfg, corpus.vocab.size());
  load_training_checkpoint(args.checkpoint_path, models.nonar.get(), models.ar.get());

  std::vector<TokenSequence> sources;
  for (const auto& p : corpus.test.pairs) sources.push_back(p.source);
  auto results = decode_corpus(mode, sources, cfg.decode_config(), models.nonar.get(),
                               models.ar.get(), args.workers);
  const std::string out = args.out_path.empty() ? "decode.dump" : args.out_path;
  write_dump(out, results, corpus.vocab);
  std::cout << "dump: " << out << " (" << results.size() << " lines)\n";
  return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& dump_path,
             const std::string& refs_path, bool sweep) {
  RunConfig cfg = resolve_config(args);
  const auto stopwords = load_stopwords(cfg.eval_stopwords);

  if (sweep) {
    // dev-split sweep: decode at each lambda on the configured dev data
    if (args.checkpoint_path.empty()) {
      std::cerr << "eval --sweep: --checkpoint is required\n";
      return kExitUsage;
    }
    DecodeMode mode = decode_mode_from_name(args.mode);
    CorpusBundle corpus = build_corpus(cfg);
    LoadedModels models = build_models(cfg, corpus.vocab.size());
    load_training_checkpoint(args.checkpoint_path, models.nonar.get(), models.ar.get());
    auto sweep_result = lambda_sweep(mode, corpus.dev, corpus.vocab, cfg.decode_config(),
                                     models.nonar.get(), models.ar.get(), stopwords,
                                     args.workers);
    std::ostringstream os;
    for (const auto& p : sweep_result.points) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "lambda=%.1f bleu=%.4f", p.lambda, p.report.bleu);
      os << buf << '\n';
    }
    char best[48];
    std::snprintf(best, sizeof(best), "best_lambda=%.1f", sweep_result.best_lambda);
    os << best << '\n';
    if (!args.out_path.empty()) {
      std::ofstream f(args.out_path, std::ios::binary);
      f << os.str();
    }
    std::cout << os.str();
    return kExitOk;
  }

  if (dump_path.empty() || refs_path.empty()) {
    std::cerr << "eval: --dump and --refs are required\n";
    return kExitUsage;
  }
  auto dump = read_dump(dump_path);
  auto refs_raw = read_pairs_file(refs_path, cfg.corpus_max_len);
  if (dump.size() != refs_raw.size()) {
    std::cerr << "eval: dump has " << dump.size() << " lines but references have "
              << refs_raw.size() << "\n";
    return kExitData;
  }
  std::vector<Sentence> hyps, refs;
  for (const auto& d : dump) hyps.push_back(d.output);
  for (const auto& r : refs_raw) refs.push_back(r.target);
  MetricsReport report = compute_metrics(hyps, refs, stopwords);
  if (!args.out_path.empty()) {
    std::ofstream f(args.out_path, std::ios::binary);
    f << report.to_string();
  }
  std::cout << report.to_string();
  return kExitOk;
}

// Oracle equivalence and factorization identities over the test split.
// Nonzero exit on any mismatch; the first mismatching source is printed.
int cmd_oracle(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  if (args.checkpoint_path.empty()) {
    std::cerr << "oracle: --checkpoint is required\n";
    return kExitUsage;
  }
  CorpusBundle corpus = build_corpus(cfg);
  LoadedModels models = build_models(cfg, corpus.vocab.size());
  if (!models.nonar) {
    std::cerr << "oracle: config must include the non-AR models\n";
    return kExitData;
  }
  load_training_checkpoint(args.checkpoint_path, models.nonar.get(), models.ar.get());
  const ForwardModel& fwd = *models.nonar->fwd;
  const BackwardModel& bwd = *models.nonar->bwd;
  const DecodeConfig dc = cfg.decode_config();

  const std::vector<double> lambdas = {0.0, 0.3, 0.5, 0.8, 1.0};
  bool ok = true;

  // per-token decode vs exhaustive argmax
  int checked = 0;
  for (const auto& p : corpus.test.pairs) {
    const int target_len = fwd.predict_target_len(p.source);
    auto oracle_best = brute_force_mmi_argmax_sweep(p.source, target_len, lambdas, fwd, bwd);
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
      Candidate mine = nonar_mmi_decode(p.source, lambdas[li], fwd, bwd, dc.tie_break);
      if (mine.tokens != oracle_best[li].tokens) {
        std::printf("[FAIL] decode/oracle mismatch at lambda=%.1f source: %s\n", lambdas[li],
                    corpus.vocab.decode_join(p.source).c_str());
        std::printf("       decode: %s\n", corpus.vocab.decode_join(mine.tokens).c_str());
        std::printf("       oracle: %s\n",
                    corpus.vocab.decode_join(oracle_best[li].tokens).c_str());
        ok = false;
      }
    }
    ++checked;
  }
  if (ok) std::printf("[PASS] argmax equals exhaustive search on %d sources x %zu lambdas\n",
                      checked, lambdas.size());

  // factorization identity on the gold pairs
  bool ident_ok = true;
  for (const auto& p : corpus.test.pairs) {
    for (double lambda : {0.3, 0.7}) {
      auto b = mmi_objective(p.source, p.target, lambda, fwd, bwd);
      const double direct = b.recompute_total();
      const double two_term = b.two_term_total();
      const double denom = std::max({std::abs(direct), std::abs(two_term), 1e-12});
      if (std::abs(direct - two_term) / denom > 1e-12) {
        std::printf("[FAIL] factorization identity off at source: %s\n",
                    corpus.vocab.decode_join(p.source).c_str());
        ident_ok = false;
      }
    }
  }
  if (ident_ok) std::printf("[PASS] per-token sum equals two-term objective\n");
  ok = ok && ident_ok;

  std::printf(ok ? "oracle: all checks passed\n" : "oracle: FAILURES\n");
  return ok ? kExitOk : kExitAcceptance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"non-autoregressive generation with mutual-information decoding"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string dump_path, refs_path;
  bool sweep = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "config file (key=value lines)");
    cmd->add_option("--checkpoint", args.checkpoint_path, "checkpoint file");
    cmd->add_option("--lambda", args.lambda, "mutual-information weight in [0,1]");
    cmd->add_option("--seed", args.seed, "64-bit seed override");
    cmd->add_option("--workers", args.workers, "decode worker threads");
    cmd->add_option("--out", args.out_path, "output path");
  };

  CLI::App* train = app.add_subcommand("train", "train models and write checkpoints");
  add_common(train);
  CLI::App* decode = app.add_subcommand("decode", "decode the test split into a dump file");
  add_common(decode);
  decode->add_option("--mode", args.mode,
                     "nonar | nonar+mmi | ar | ar+mmi | ar+mmi+diverse");
  CLI::App* eval = app.add_subcommand("eval", "score a decode dump against references");
  add_common(eval);
  eval->add_option("--mode", args.mode, "decode mode for --sweep");
  eval->add_option("--dump", dump_path, "decode dump file");
  eval->add_option("--refs", refs_path, "reference corpus file (source TAB target)");
  eval->add_flag("--sweep", sweep, "sweep lambda over 0.0..1.0 on the dev split");
  CLI::App* oracle = app.add_subcommand("oracle", "brute-force equivalence checks");
  add_common(oracle);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(args);
    if (decode->parsed()) return cmd_decode(args);
    if (eval->parsed()) return cmd_eval(args, dump_path, refs_path, sweep);
    if (oracle->parsed()) return cmd_oracle(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
