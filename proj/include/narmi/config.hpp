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

// Run configuration: flat key=value text with dotted section prefixes.
// A run is reproducible from (config, seed, corpus) alone, so the resolved
// config echoes at the top of every run log.

#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/corpus.hpp"
#include "narmi/decode.hpp"
#include "narmi/transformer.hpp"

namespace narmi {

struct RunConfig {
  // corpus
  std::string corpus_task = "copy";  // copy | reverse | keyed_dialog | file
  std::string corpus_train_path;     // file task only
  std::string corpus_dev_path;
  std::string corpus_test_path;
  int corpus_vocab_size = 20;
  int corpus_n_train = 500;
  int corpus_n_dev = 100;
  int corpus_n_test = 100;
  int corpus_len_min = 3;
  int corpus_len_max = 8;
  double corpus_dull_fraction = 0.5;
  int corpus_min_freq = 1;
  int corpus_max_len = 18;

  // model
  int model_d = 32;
  int model_heads = 4;
  int model_ffn = 64;
  int model_blocks = 2;
  int model_rel_clip = 4;
  int model_max_positions = 64;

  // training
  double train_lr = 1e-3;
  int train_steps = 200;
  int train_batch_tokens = 160;
  std::uint64_t train_seed = 1;
  double train_dropout = 0.0;
  int train_checkpoint_every = 0;  // 0: only at the end
  std::string train_models = "both";  // nonar | ar | both
  int train_bwd_position_sample = 0;  // 0: every target position

  // decoding
  double decode_lambda = 0.4;
  int decode_nbest = 10;
  int decode_len_candidates = 4;
  int decode_tok_candidates = 5;
  int decode_beam = 10;
  double decode_sibling_penalty = 1.0;
  std::string decode_tie_break = "lowest";  // lowest | highest (oracle test hook)

  // evaluation
  std::string eval_stopwords = "data/stopwords.txt";

  BlockConfig block_config() const {
    BlockConfig b;
    b.d_model = model_d;
    b.n_heads = model_heads;
    b.d_ff = model_ffn;
    b.n_blocks = model_blocks;
    b.rel_clip = model_rel_clip;
    b.dropout = train_dropout;
    b.max_positions = model_max_positions;
    b.validate();
    return b;
  }

  DecodeConfig decode_config() const {
    DecodeConfig d;
    d.lambda = decode_lambda;
    d.nbest = decode_nbest;
    d.len_candidates = decode_len_candidates;
    d.tok_candidates = decode_tok_candidates;
    d.beam = decode_beam;
    d.sibling_penalty = decode_sibling_penalty;
    if (decode_tie_break == "lowest") {
      d.tie_break = DecodeConfig::TieBreak::LowestId;
    } else if (decode_tie_break == "highest") {
      d.tie_break = DecodeConfig::TieBreak::HighestId;
    } else {
      throw std::invalid_argument("config: decode.tie_break must be lowest or highest");
    }
    d.validate();
    return d;
  }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.task = synthetic_task_from_name(corpus_task);
    s.vocab_size = corpus_vocab_size;
    s.len_min = corpus_len_min;
    s.len_max = corpus_len_max;
    s.seed = train_seed;
    s.dull_fraction = corpus_dull_fraction;
    return s;
  }

  void set(const std::string& key, const std::string& value);
  std::string echo() const;
};

namespace detail {

inline int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    unsigned long long out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(out);
  } catch (...) {
    throw std::invalid_argument("config: " + key + " expects an unsigned integer, got '" + v +
                                "'");
  }
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
  using detail::to_double;
  using detail::to_int;
  using detail::to_u64;
  if (key == "corpus.task") corpus_task = value;
  else if (key == "corpus.train_path") corpus_train_path = value;
  else if (key == "corpus.dev_path") corpus_dev_path = value;
  else if (key == "corpus.test_path") corpus_test_path = value;
  else if (key == "corpus.vocab_size") corpus_vocab_size = to_int(key, value);
  else if (key == "corpus.n_train") corpus_n_train = to_int(key, value);
  else if (key == "corpus.n_dev") corpus_n_dev = to_int(key, value);
  else if (key == "corpus.n_test") corpus_n_test = to_int(key, value);
  else if (key == "corpus.len_min") corpus_len_min = to_int(key, value);
  else if (key == "corpus.len_max") corpus_len_max = to_int(key, value);
  else if (key == "corpus.dull_fraction") corpus_dull_fraction = to_double(key, value);
  else if (key == "corpus.min_freq") corpus_min_freq = to_int(key, value);
  else if (key == "corpus.max_len") corpus_max_len = to_int(key, value);
  else if (key == "model.d") model_d = to_int(key, value);
  else if (key == "model.heads") model_heads = to_int(key, value);
  else if (key == "model.ffn") model_ffn = to_int(key, value);
  else if (key == "model.blocks") model_blocks = to_int(key, value);
  else if (key == "model.rel_clip") model_rel_clip = to_int(key, value);
  else if (key == "model.max_positions") model_max_positions = to_int(key, value);
  else if (key == "train.lr") train_lr = to_double(key, value);
  else if (key == "train.steps") train_steps = to_int(key, value);
  else if (key == "train.batch_tokens") train_batch_tokens = to_int(key, value);
  else if (key == "train.seed") train_seed = to_u64(key, value);
  else if (key == "train.dropout") train_dropout = to_double(key, value);
  else if (key == "train.checkpoint_every") train_checkpoint_every = to_int(key, value);
  else if (key == "train.models") train_models = value;
  else if (key == "train.bwd_position_sample") train_bwd_position_sample = to_int(key, value);
  else if (key == "decode.lambda") decode_lambda = to_double(key, value);
  else if (key == "decode.nbest") decode_nbest = to_int(key, value);
  else if (key == "decode.len_candidates") decode_len_candidates = to_int(key, value);
  else if (key == "decode.tok_candidates") decode_tok_candidates = to_int(key, value);
  else if (key == "decode.beam") decode_beam = to_int(key, value);
  else if (key == "decode.sibling_penalty") decode_sibling_penalty = to_double(key, value);
  else if (key == "decode.tie_break") decode_tie_break = value;
  else if (key == "eval.stopwords") eval_stopwords = value;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline std::string RunConfig::echo() const {
  std::ostringstream os;
  char num[64];
  auto put_d = [&](const char* k, double v) {
    std::snprintf(num, sizeof(num), "%.6g", v);
    os << k << '=' << num << '\n';
  };
  os << "corpus.task=" << corpus_task << '\n';
  os << "corpus.train_path=" << corpus_train_path << '\n';
  os << "corpus.dev_path=" << corpus_dev_path << '\n';
  os << "corpus.test_path=" << corpus_test_path << '\n';
  os << "corpus.vocab_size=" << corpus_vocab_size << '\n';
  os << "corpus.n_train=" << corpus_n_train << '\n';
  os << "corpus.n_dev=" << corpus_n_dev << '\n';
  os << "corpus.n_test=" << corpus_n_test << '\n';
  os << "corpus.len_min=" << corpus_len_min << '\n';
  os << "corpus.len_max=" << corpus_len_max << '\n';
  put_d("corpus.dull_fraction", corpus_dull_fraction);
  os << "corpus.min_freq=" << corpus_min_freq << '\n';
  os << "corpus.max_len=" << corpus_max_len << '\n';
  os << "model.d=" << model_d << '\n';
  os << "model.heads=" << model_heads << '\n';
  os << "model.ffn=" << model_ffn << '\n';
  os << "model.blocks=" << model_blocks << '\n';
  os << "model.rel_clip=" << model_rel_clip << '\n';
  os << "model.max_positions=" << model_max_positions << '\n';
  put_d("train.lr", train_lr);
  os << "train.steps=" << train_steps << '\n';
  os << "train.batch_tokens=" << train_batch_tokens << '\n';
  os << "train.seed=" << train_seed << '\n';
  put_d("train.dropout", train_dropout);
  os << "train.checkpoint_every=" << train_checkpoint_every << '\n';
  os << "train.models=" << train_models << '\n';
  os << "train.bwd_position_sample=" << train_bwd_position_sample << '\n';
  put_d("decode.lambda", decode_lambda);
  os << "decode.nbest=" << decode_nbest << '\n';
  os << "decode.len_candidates=" << decode_len_candidates << '\n';
  os << "decode.tok_candidates=" << decode_tok_candidates << '\n';
  os << "decode.beam=" << decode_beam << '\n';
  put_d("decode.sibling_penalty", decode_sibling_penalty);
  os << "decode.tie_break=" << decode_tie_break << '\n';
  os << "eval.stopwords=" << eval_stopwords << '\n';
  return os.str();
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value");
    }
    cfg.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace narmi
