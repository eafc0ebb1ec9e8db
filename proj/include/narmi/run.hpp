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

// Run pipeline shared by the CLI and the integration suites: corpus
// assembly, model bundles, the deterministic training loop, decode modes,
// dump files, and evaluation.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "narmi/adam.hpp"
#include "narmi/ar_model.hpp"
#include "narmi/backward_model.hpp"
#include "narmi/checkpoint.hpp"
#include "narmi/config.hpp"
#include "narmi/corpus.hpp"
#include "narmi/decode.hpp"
#include "narmi/forward_model.hpp"
#include "narmi/metrics.hpp"
#include "narmi/mmi.hpp"
#include "narmi/vocab.hpp"

namespace narmi {

// ---------------------------------------------------------------------------
// corpus assembly
// ---------------------------------------------------------------------------

struct CorpusBundle {
  Corpus train, dev, test;
  Vocabulary vocab;
};

inline CorpusBundle build_corpus(const RunConfig& cfg) {
  CorpusBundle out;
  if (cfg.corpus_task == "file") {
    if (cfg.corpus_train_path.empty()) {
      throw std::runtime_error("config: corpus.train_path required for the file task");
    }
    auto raw_train = read_pairs_file(cfg.corpus_train_path, cfg.corpus_max_len);
    out.vocab = build_vocabulary(raw_train, cfg.corpus_min_freq);
    out.train = encode_corpus(raw_train, out.vocab, Split::Train);
    if (!cfg.corpus_dev_path.empty()) {
      out.dev = encode_corpus(read_pairs_file(cfg.corpus_dev_path, cfg.corpus_max_len),
                              out.vocab, Split::Dev);
    }
    if (!cfg.corpus_test_path.empty()) {
      out.test = encode_corpus(read_pairs_file(cfg.corpus_test_path, cfg.corpus_max_len),
                               out.vocab, Split::Test);
    }
    out.dev.split = Split::Dev;
    out.test.split = Split::Test;
    return out;
  }
  SyntheticSpec spec = cfg.synthetic_spec();
  auto splits = gen_synthetic_splits(spec, cfg.corpus_n_train, cfg.corpus_n_dev,
                                     cfg.corpus_n_test);
  out.train = std::move(splits.train);
  out.dev = std::move(splits.dev);
  out.test = std::move(splits.test);
  out.vocab = std::move(splits.vocab);
  return out;
}

// ---------------------------------------------------------------------------
// model bundles
// ---------------------------------------------------------------------------

// Forward and backward parallel models over one shared token embedding,
// optimized jointly.
struct NonArBundle {
  ParamSet params;
  Tensor embedding;
  std::unique_ptr<ForwardModel> fwd;
  std::unique_ptr<BackwardModel> bwd;
  std::unique_ptr<Adam> opt;
};

inline std::unique_ptr<NonArBundle> make_nonar_bundle(const BlockConfig& block, int vocab_size,
                                                      std::uint64_t seed, double lr) {
  auto b = std::make_unique<NonArBundle>();
  Rng rng(Rng::fold(seed, 1));
  b->embedding = b->params.add("embed", init::normal({vocab_size, block.d_model}, 0.08, rng));
  b->fwd = std::make_unique<ForwardModel>(b->params, b->embedding, block, rng, "fwd");
  b->bwd = std::make_unique<BackwardModel>(b->params, b->embedding, block, rng, "bwd");
  AdamConfig ac;
  ac.lr = lr;
  b->opt = std::make_unique<Adam>(b->params, ac);
  return b;
}

// The pair of autoregressive scorers (forward p(y|x), backward p(x|y)) with
// their own shared embedding.
struct ArBundle {
  ParamSet params;
  Tensor embedding;
  std::unique_ptr<ArModel> fwd;
  std::unique_ptr<ArModel> bwd;
  std::unique_ptr<Adam> opt;
};

inline std::unique_ptr<ArBundle> make_ar_bundle(const BlockConfig& block, int vocab_size,
                                                std::uint64_t seed, double lr) {
  auto b = std::make_unique<ArBundle>();
  Rng rng(Rng::fold(seed, 2));
  b->embedding = b->params.add("embed", init::normal({vocab_size, block.d_model}, 0.08, rng));
  b->fwd = std::make_unique<ArModel>(b->params, b->embedding, block, rng, "arf");
  b->bwd = std::make_unique<ArModel>(b->params, b->embedding, block, rng, "arb");
  AdamConfig ac;
  ac.lr = lr;
  b->opt = std::make_unique<Adam>(b->params, ac);
  return b;
}

// ---------------------------------------------------------------------------
// deterministic batching
// ---------------------------------------------------------------------------

// Batches are a pure function of (corpus, seed, step): every epoch gets its
// own derived shuffle, and pairs accumulate until the token budget is hit.
// Resuming a run replays the schedule to the saved step.
class BatchSchedule {
 public:
  BatchSchedule(const Corpus& corpus, std::uint64_t seed, int batch_tokens)
      : corpus_(&corpus), seed_(seed), batch_tokens_(std::max(1, batch_tokens)) {
    if (corpus.pairs.empty()) throw std::invalid_argument("batch schedule: empty corpus");
    start_epoch(0);
  }

  std::vector<SourceTargetPair> next() {
    std::vector<SourceTargetPair> batch;
    int tokens = 0;
    while (true) {
      if (cursor_ >= perm_.size()) start_epoch(epoch_ + 1);
      const auto& pair = corpus_->pairs[perm_[cursor_]];
      const int cost = static_cast<int>(pair.source.size() + pair.target.size());
      if (!batch.empty() && tokens + cost > batch_tokens_) break;
      batch.push_back(pair);
      tokens += cost;
      ++cursor_;
      if (tokens >= batch_tokens_) break;
    }
    return batch;
  }

  void skip(int steps) {
    for (int i = 0; i < steps; ++i) next();
  }

 private:
  void start_epoch(int epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    perm_.resize(corpus_->pairs.size());
    std::iota(perm_.begin(), perm_.end(), 0u);
    Rng rng(Rng::fold(seed_, 1000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = perm_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, i - 1));
      std::swap(perm_[i - 1], perm_[j]);
    }
  }

  const Corpus* corpus_;
  std::uint64_t seed_;
  int batch_tokens_;
  int epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> perm_;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct StepLog {
  int step = 0;
  double fwd_loss = 0.0;
  double bwd_loss = 0.0;
  double len_loss = 0.0;
  double ar_fwd_loss = 0.0;
  double ar_bwd_loss = 0.0;

  std::string to_string(bool with_ar) const {
    char buf[256];
    if (with_ar) {
      std::snprintf(buf, sizeof(buf),
                    "step=%d fwd_loss=%.6f bwd_loss=%.6f len_loss=%.6f "
                    "ar_fwd_loss=%.6f ar_bwd_loss=%.6f",
                    step, fwd_loss, bwd_loss, len_loss, ar_fwd_loss, ar_bwd_loss);
    } else {
      std::snprintf(buf, sizeof(buf), "step=%d fwd_loss=%.6f bwd_loss=%.6f len_loss=%.6f",
                    step, fwd_loss, bwd_loss, len_loss);
    }
    return buf;
  }
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(int step)> on_checkpoint;
};

inline void save_training_checkpoint(const std::string& path, const RunConfig& cfg, int step,
                                     NonArBundle* nonar, ArBundle* ar) {
  CheckpointWriter w;
  w.add_meta("step", step);
  w.add_meta("vocab_size", nonar ? nonar->embedding.rows()
                                 : (ar ? ar->embedding.rows() : 0));
  w.add_meta("d_model", cfg.model_d);
  if (nonar) checkpoint_add_params(w, "nonar", nonar->params, nonar->opt.get());
  if (ar) checkpoint_add_params(w, "ar", ar->params, ar->opt.get());
  w.write(path);
  // continue from exactly what was written so a resumed process replays the
  // same trajectory
  if (nonar) quantize_to_checkpoint_precision(nonar->params, nonar->opt.get());
  if (ar) quantize_to_checkpoint_precision(ar->params, ar->opt.get());
}

inline int load_training_checkpoint(const std::string& path, NonArBundle* nonar,
                                    ArBundle* ar) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (nonar) checkpoint_load_params(ckpt, "nonar", nonar->params, nonar->opt.get());
  if (ar) checkpoint_load_params(ckpt, "ar", ar->params, ar->opt.get());
  return static_cast<int>(ckpt.meta_value("step"));
}

// One optimizer step per bundle per loop iteration. The non-AR pair trains
// on the sum of forward and backward losses (token + length terms, 1:1);
// the AR pair likewise sums both directions.
inline void train_models(const RunConfig& cfg, const Corpus& train, NonArBundle* nonar,
                         ArBundle* ar, int start_step, const TrainHooks& hooks = {},
                         const std::string& checkpoint_path = "") {
  BatchSchedule schedule(train, cfg.train_seed, cfg.train_batch_tokens);
  schedule.skip(start_step);
  for (int step = start_step + 1; step <= cfg.train_steps; ++step) {
    const auto batch = schedule.next();
    Rng dropout_rng(Rng::fold(cfg.train_seed, 3000 + static_cast<std::uint64_t>(step)));
    StepLog log;
    log.step = step;
    if (nonar) {
      nonar->params.zero_grad();
      TrainLosses fl, bl;
      Tensor floss = nonar->fwd->build_loss(batch, &fl, &dropout_rng);
      Tensor bloss = nonar->bwd->build_loss(batch, &bl, &dropout_rng,
                                            cfg.train_bwd_position_sample);
      backward(add(floss, bloss));
      nonar->opt->step();
      log.fwd_loss = fl.token_ce;
      log.bwd_loss = bl.token_ce;
      log.len_loss = fl.length_ce + bl.length_ce;
    }
    if (ar) {
      ar->params.zero_grad();
      double af = 0.0, ab = 0.0;
      Tensor floss = ar->fwd->build_loss(batch, &af, &dropout_rng, /*swap=*/false);
      Tensor bloss = ar->bwd->build_loss(batch, &ab, &dropout_rng, /*swap=*/true);
      backward(add(floss, bloss));
      ar->opt->step();
      log.ar_fwd_loss = af;
      log.ar_bwd_loss = ab;
    }
    if (hooks.on_step) hooks.on_step(log);
    const bool last = step == cfg.train_steps;
    const bool periodic =
        cfg.train_checkpoint_every > 0 && step % cfg.train_checkpoint_every == 0;
    if (!checkpoint_path.empty() && (last || periodic)) {
      save_training_checkpoint(checkpoint_path, cfg, step, nonar, ar);
      if (hooks.on_checkpoint) hooks.on_checkpoint(step);
    }
  }
}

// ---------------------------------------------------------------------------
// decoding pipelines
// ---------------------------------------------------------------------------

enum class DecodeMode { NonAr, NonArMmi, Ar, ArMmi, ArMmiDiverse };

inline DecodeMode decode_mode_from_name(const std::string& name) {
  if (name == "nonar") return DecodeMode::NonAr;
  if (name == "nonar+mmi") return DecodeMode::NonArMmi;
  if (name == "ar") return DecodeMode::Ar;
  if (name == "ar+mmi") return DecodeMode::ArMmi;
  if (name == "ar+mmi+diverse") return DecodeMode::ArMmiDiverse;
  throw std::invalid_argument("unknown decode mode '" + name + "'");
}

inline const char* decode_mode_name(DecodeMode m) {
  switch (m) {
    case DecodeMode::NonAr: return "nonar";
    case DecodeMode::NonArMmi: return "nonar+mmi";
    case DecodeMode::Ar: return "ar";
    case DecodeMode::ArMmi: return "ar+mmi";
    default: return "ar+mmi+diverse";
  }
}

inline bool decode_mode_needs_ar(DecodeMode m) {
  return m == DecodeMode::Ar || m == DecodeMode::ArMmi || m == DecodeMode::ArMmiDiverse;
}

struct DecodeResult {
  TokenSequence source;
  TokenSequence tokens;
  double total = 0.0;
  std::vector<double> per_token;
};

namespace detail {

inline std::vector<double> ar_per_token_scores(const ArModel& ar, const TokenSequence& x,
                                               const TokenSequence& y) {
  autograd::NoGradGuard ng;
  Tensor lp = log_softmax_rows(ar.decoder_logits(ar.encode_source(x), y));
  std::vector<double> out;
  out.reserve(y.size() + 1);
  for (std::size_t t = 0; t < y.size(); ++t) out.push_back(lp.at(static_cast<int>(t), y[t]));
  out.push_back(lp.at(static_cast<int>(y.size()), Vocabulary::kEos));
  return out;
}

}  // namespace detail

// AR decode budget: the classifier's upper range past the source length.
inline int ar_max_len(const TokenSequence& x, const BlockConfig& block) {
  return std::min(block.max_positions - 1, static_cast<int>(x.size()) + kLenDeltaRange);
}

inline DecodeResult decode_one(DecodeMode mode, const TokenSequence& x,
                               const DecodeConfig& dc, const NonArBundle* nonar,
                               const ArBundle* ar) {
  DecodeResult r;
  r.source = x;
  switch (mode) {
    case DecodeMode::NonAr: {
      Candidate c = nonar_argmax_decode(x, *nonar->fwd, dc.tie_break);
      r.tokens = c.tokens;
      r.per_token = c.breakdown.fwd;
      r.total = c.breakdown.total;
      break;
    }
    case DecodeMode::NonArMmi: {
      Candidate c = nonar_mmi_decode(x, dc.lambda, *nonar->fwd, *nonar->bwd, dc.tie_break);
      r.tokens = c.tokens;
      r.per_token.resize(c.tokens.size());
      for (std::size_t t = 0; t < c.tokens.size(); ++t) {
        r.per_token[t] = per_token_mmi(c.breakdown.fwd[t], c.breakdown.bwd[t], dc.lambda,
                                       c.breakdown.target_len());
      }
      r.total = c.breakdown.total;
      break;
    }
    case DecodeMode::Ar: {
      auto nbest = ar_beam_search(x, dc.beam, ar_max_len(x, ar->fwd->config()), 0.0, *ar->fwd);
      const BeamHypothesis& best = nbest.front();
      r.tokens = best.tokens;
      r.per_token = detail::ar_per_token_scores(*ar->fwd, x, best.tokens);
      r.total = best.logprob;
      break;
    }
    case DecodeMode::ArMmi:
    case DecodeMode::ArMmiDiverse: {
      const double gamma = mode == DecodeMode::ArMmiDiverse ? dc.sibling_penalty : 0.0;
      auto nbest = ar_beam_search(x, dc.beam, ar_max_len(x, ar->fwd->config()), gamma,
                                  *ar->fwd);
      auto ranked = ar_mmi_rerank(nbest, dc.lambda, x, *ar->bwd);
      const auto& best = ranked.front();
      r.tokens = best.hyp.tokens;
      r.per_token = detail::ar_per_token_scores(*ar->fwd, x, best.hyp.tokens);
      r.total = best.mmi_score;
      break;
    }
  }
  return r;
}

// Decode a list of sources, optionally fanning out over a bounded worker
// pool. Results are merged by input index, so worker count never changes
// the output.
inline std::vector<DecodeResult> decode_corpus(DecodeMode mode,
                                               const std::vector<TokenSequence>& sources,
                                               const DecodeConfig& dc,
                                               const NonArBundle* nonar, const ArBundle* ar,
                                               int workers = 1) {
  if (decode_mode_needs_ar(mode) && !ar)
    throw std::invalid_argument("decode: mode requires AR models");
  if (!decode_mode_needs_ar(mode) && !nonar)
    throw std::invalid_argument("decode: mode requires non-AR models");
  std::vector<DecodeResult> results(sources.size());
  if (workers <= 1 || sources.size() <= 1) {
    for (std::size_t i = 0; i < sources.size(); ++i) {
      results[i] = decode_one(mode, sources[i], dc, nonar, ar);
    }
    return results;
  }
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    autograd::NoGradGuard ng;
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= sources.size()) return;
      results[i] = decode_one(mode, sources[i], dc, nonar, ar);
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(workers, static_cast<int>(sources.size()));
  pool.reserve(n);
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

// ---------------------------------------------------------------------------
// dump files
// ---------------------------------------------------------------------------

// One result per line: input TAB output TAB total-score TAB per-token
// scores, comma separated, six decimal places.
inline std::string format_dump_line(const DecodeResult& r, const Vocabulary& vocab) {
  std::ostringstream os;
  os << vocab.decode_join(r.source) << '\t' << vocab.decode_join(r.tokens) << '\t';
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", r.total);
  os << buf << '\t';
  for (std::size_t i = 0; i < r.per_token.size(); ++i) {
    if (i) os << ',';
    std::snprintf(buf, sizeof(buf), "%.6f", r.per_token[i]);
    os << buf;
  }
  return os.str();
}

inline void write_dump(const std::string& path, const std::vector<DecodeResult>& results,
                       const Vocabulary& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write decode dump " + path);
  for (const auto& r : results) f << format_dump_line(r, vocab) << '\n';
}

struct DumpLine {
  Sentence source;
  Sentence output;
  double total = 0.0;
  std::vector<double> per_token;
};

inline std::vector<DumpLine> read_dump(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read decode dump " + path);
  std::vector<DumpLine> out;
  std::string line;
  int lineno = 0;
  auto split_on = [](const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      const std::size_t p = s.find(sep, start);
      parts.push_back(s.substr(start, p == std::string::npos ? p : p - start));
      if (p == std::string::npos) break;
      start = p + 1;
    }
    return parts;
  };
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = split_on(line, '\t');
    if (fields.size() != 4) {
      throw std::runtime_error("dump line " + std::to_string(lineno) +
                               ": expected 4 tab-separated fields");
    }
    DumpLine d;
    for (const auto& tok : split_on(fields[0], ' ')) d.source.push_back(tok);
    for (const auto& tok : split_on(fields[1], ' ')) d.output.push_back(tok);
    d.total = std::stod(fields[2]);
    for (const auto& s : split_on(fields[3], ',')) {
      if (!s.empty()) d.per_token.push_back(std::stod(s));
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

inline std::vector<Sentence> corpus_targets(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<Sentence> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.push_back(vocab.decode(p.target));
  return out;
}

inline std::vector<Sentence> result_sentences(const std::vector<DecodeResult>& results,
                                              const Vocabulary& vocab) {
  std::vector<Sentence> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(vocab.decode(r.tokens));
  return out;
}

struct LambdaSweepPoint {
  double lambda = 0.0;
  MetricsReport report;
};

struct LambdaSweepResult {
  std::vector<LambdaSweepPoint> points;
  double best_lambda = 0.0;  // highest BLEU; ties toward the smaller lambda
};

// Dev-set sweep over the lambda grid 0.0 .. 1.0 step 0.1.
inline LambdaSweepResult lambda_sweep(DecodeMode mode, const Corpus& dev,
                                      const Vocabulary& vocab, DecodeConfig dc,
                                      const NonArBundle* nonar, const ArBundle* ar,
                                      const std::set<std::string>& stopwords,
                                      int workers = 1) {
  std::vector<TokenSequence> sources;
  for (const auto& p : dev.pairs) sources.push_back(p.source);
  const auto refs = corpus_targets(dev, vocab);
  LambdaSweepResult out;
  double best_bleu = -1.0;
  for (int i = 0; i <= 10; ++i) {
    const double lambda = i / 10.0;
    dc.lambda = lambda;
    auto results = decode_corpus(mode, sources, dc, nonar, ar, workers);
    MetricsReport report = compute_metrics(result_sentences(results, vocab), refs, stopwords);
    out.points.push_back({lambda, report});
    if (report.bleu > best_bleu) {
      best_bleu = report.bleu;
      out.best_lambda = lambda;
    }
  }
  return out;
}

}  // namespace narmi
