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

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "narmi/rng.hpp"
#include "narmi/vocab.hpp"

namespace narmi {

struct SourceTargetPair {
  TokenSequence source;
  TokenSequence target;
};

enum class Split { Train, Dev, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    default: return "test";
  }
}

struct Corpus {
  std::vector<SourceTargetPair> pairs;
  Split split = Split::Train;

  std::size_t size() const { return pairs.size(); }
};

// Corpus file format: one pair per line, source TAB target, tokens
// separated by single spaces, no trailing whitespace.
struct RawPair {
  std::vector<std::string> source;
  std::vector<std::string> target;
};

namespace detail {

inline std::vector<std::string> split_tokens(const std::string& side, int lineno,
                                             const char* which) {
  std::vector<std::string> toks;
  // manual scan so that double spaces / trailing whitespace are caught
  std::size_t start = 0;
  while (start <= side.size()) {
    std::size_t sp = side.find(' ', start);
    std::string tok = side.substr(start, sp == std::string::npos ? sp : sp - start);
    if (tok.empty()) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": malformed " +
                               which + " side (empty token or stray whitespace)");
    }
    toks.push_back(tok);
    if (sp == std::string::npos) break;
    start = sp + 1;
  }
  return toks;
}

}  // namespace detail

inline std::vector<RawPair> read_pairs_file(const std::string& path, int max_len = 18) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read corpus file " + path);
  std::vector<RawPair> out;
  std::string line;
  int lineno = 0;
  static const std::set<std::string> reserved = {"<pad>", "<bos>", "<eos>", "<unk>",
                                                 "<dummy>"};
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": no tab separator");
    }
    if (line.find('\t', tab + 1) != std::string::npos) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) +
                               ": more than one tab");
    }
    const std::string src = line.substr(0, tab);
    const std::string tgt = line.substr(tab + 1);
    if (src.empty() || tgt.empty()) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": empty side");
    }
    RawPair p;
    p.source = detail::split_tokens(src, lineno, "source");
    p.target = detail::split_tokens(tgt, lineno, "target");
    for (const auto* side : {&p.source, &p.target}) {
      if (static_cast<int>(side->size()) > max_len) {
        throw std::runtime_error("corpus line " + std::to_string(lineno) +
                                 ": sequence longer than " + std::to_string(max_len));
      }
      for (const auto& t : *side) {
        if (reserved.count(t)) {
          throw std::runtime_error("corpus line " + std::to_string(lineno) +
                                   ": reserved token '" + t + "' in raw text");
        }
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

// Vocabulary from a training corpus; tokens below the min-frequency cutoff
// stay unmapped and later encode to <unk>. First-seen order keeps ids stable.
inline Vocabulary build_vocabulary(const std::vector<RawPair>& pairs, int min_freq = 1) {
  std::map<std::string, int> freq;
  std::vector<std::string> order;
  for (const auto& p : pairs) {
    for (const auto* side : {&p.source, &p.target}) {
      for (const auto& t : *side) {
        if (freq[t]++ == 0) order.push_back(t);
      }
    }
  }
  Vocabulary v;
  for (const auto& t : order) {
    if (freq[t] >= min_freq) v.add_token(t);
  }
  return v;
}

inline Corpus encode_corpus(const std::vector<RawPair>& pairs, const Vocabulary& vocab,
                            Split split) {
  Corpus c;
  c.split = split;
  c.pairs.reserve(pairs.size());
  for (const auto& p : pairs) {
    c.pairs.push_back({vocab.encode(p.source), vocab.encode(p.target)});
  }
  return c;
}

inline std::pair<Corpus, Vocabulary> load_corpus(const std::string& path, int min_freq = 1,
                                                 int max_len = 18) {
  auto raw = read_pairs_file(path, max_len);
  Vocabulary vocab = build_vocabulary(raw, min_freq);
  return {encode_corpus(raw, vocab, Split::Train), vocab};
}

inline void save_corpus(const Corpus& corpus, const Vocabulary& vocab,
                        const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write corpus file " + path);
  for (const auto& p : corpus.pairs) {
    f << vocab.decode_join(p.source) << '\t' << vocab.decode_join(p.target) << '\n';
  }
}

// ---------------------------------------------------------------------------
// synthetic tasks
// ---------------------------------------------------------------------------

enum class SyntheticTask { Copy, Reverse, KeyedDialog };

inline SyntheticTask synthetic_task_from_name(const std::string& name) {
  if (name == "copy") return SyntheticTask::Copy;
  if (name == "reverse") return SyntheticTask::Reverse;
  if (name == "keyed_dialog") return SyntheticTask::KeyedDialog;
  throw std::invalid_argument("unknown synthetic task '" + name + "'");
}

struct SyntheticSpec {
  SyntheticTask task = SyntheticTask::Copy;
  // copy/reverse: number of word types; keyed-dialog: number of keys
  int vocab_size = 20;
  int n_pairs = 500;
  int len_min = 3;
  int len_max = 8;
  std::uint64_t seed = 1;
  // keyed-dialog: fraction of pairs whose target is replaced by the shared
  // dull response
  double dull_fraction = 0.5;
};

namespace keyed {

inline const std::vector<std::string>& fillers() {
  static const std::vector<std::string> f = {"well", "so", "um", "oh", "ah", "hm"};
  return f;
}

inline std::string key_word(int i) {
  static const std::vector<std::string> named = {"london", "tennis", "music",  "pizza",
                                                 "robot",  "garden", "winter", "cinema",
                                                 "doctor", "rocket", "violin", "castle"};
  if (i < static_cast<int>(named.size())) return named[i];
  return "topic" + std::to_string(i);
}

inline std::vector<std::string> dull_response() { return {"i", "do", "not", "know"}; }

// Key-specific four-token response built from small word pools. Every slot
// word is rare in the target marginal (pool mass splits across many keys)
// while the dull response keeps its full frequency, which is exactly the
// many-to-one imbalance that makes forward-only decoding collapse.
inline const std::vector<std::string>& opener_pool() {
  static const std::vector<std::string> p = {"visit", "play",  "hear", "taste",
                                             "watch", "grow",  "call", "tour"};
  return p;
}
inline const std::vector<std::string>& verb_pool() {
  static const std::vector<std::string> p = {"seems", "feels", "looks", "sounds",
                                             "stays", "gets",  "turns", "runs"};
  return p;
}
inline const std::vector<std::string>& trait_pool() {
  static const std::vector<std::string> p = {"foggy", "grand", "loud", "sweet",
                                             "calm",  "green", "cold", "bright"};
  return p;
}

inline std::vector<std::string> response_for_key(int i) {
  const auto& openers = opener_pool();
  const auto& verbs = verb_pool();
  const auto& traits = trait_pool();
  // distinct slot combination per key
  return {openers[i % openers.size()], key_word(i),
          verbs[(i / 3) % verbs.size()], traits[(i / 7 + i) % traits.size()]};
}

}  // namespace keyed

namespace detail {

inline void validate_spec(const SyntheticSpec& spec) {
  if (spec.vocab_size < 2) throw std::invalid_argument("gen_synthetic: vocab_size must be >= 2");
  if (spec.n_pairs < 1) throw std::invalid_argument("gen_synthetic: n_pairs must be >= 1");
  if (spec.len_min < 1 || spec.len_max < spec.len_min || spec.len_max > 18) {
    throw std::invalid_argument("gen_synthetic: len_range must satisfy 1 <= min <= max <= 18");
  }
  if (spec.dull_fraction < 0.0 || spec.dull_fraction > 1.0) {
    throw std::invalid_argument("gen_synthetic: dull_fraction must be in [0, 1]");
  }
}

// Registers the complete token pool up front so vocabulary ids do not
// depend on sample order or corpus size.
inline void register_tokens(const SyntheticSpec& spec, Vocabulary& vocab) {
  if (spec.task == SyntheticTask::KeyedDialog) {
    for (const auto& w : keyed::dull_response()) vocab.add_token(w);
    for (const auto& w : keyed::fillers()) vocab.add_token(w);
    for (const auto& w : keyed::opener_pool()) vocab.add_token(w);
    for (const auto& w : keyed::verb_pool()) vocab.add_token(w);
    for (const auto& w : keyed::trait_pool()) vocab.add_token(w);
    for (int i = 0; i < spec.vocab_size; ++i) vocab.add_token(keyed::key_word(i));
  } else {
    for (int i = 0; i < spec.vocab_size; ++i) vocab.add_token("w" + std::to_string(i));
  }
}

struct KeyedSample {
  std::vector<std::string> source;
  int key = 0;
};

inline KeyedSample sample_keyed_source(const SyntheticSpec& spec, Rng& rng) {
  KeyedSample s;
  const int len = static_cast<int>(rng.uniform_int(spec.len_min, spec.len_max));
  s.key = static_cast<int>(rng.uniform_int(0, spec.vocab_size - 1));
  const int key_pos = static_cast<int>(rng.uniform_int(0, len - 1));
  const auto& pool = keyed::fillers();
  for (int i = 0; i < len; ++i) {
    if (i == key_pos) {
      s.source.push_back(keyed::key_word(s.key));
    } else {
      s.source.push_back(pool[rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1)]);
    }
  }
  return s;
}

inline std::vector<std::string> sample_word_source(const SyntheticSpec& spec, Rng& rng) {
  const int len = static_cast<int>(rng.uniform_int(spec.len_min, spec.len_max));
  std::vector<std::string> s;
  for (int i = 0; i < len; ++i) {
    s.push_back("w" + std::to_string(rng.uniform_int(0, spec.vocab_size - 1)));
  }
  return s;
}

inline std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

}  // namespace detail

// Deterministic synthetic corpus; sources are unique within one call.
// apply_dull controls whether the keyed-dialog dull substitution runs, so a
// pipeline can keep evaluation references informative while the training
// split carries the many-to-one dull mass.
inline Corpus gen_synthetic(const SyntheticSpec& spec, Vocabulary& vocab,
                            Split split = Split::Train, bool apply_dull = true,
                            std::set<std::string>* seen_sources = nullptr) {
  detail::validate_spec(spec);
  detail::register_tokens(spec, vocab);
  Rng rng(spec.seed);
  std::set<std::string> local_seen;
  std::set<std::string>& seen = seen_sources ? *seen_sources : local_seen;

  Corpus corpus;
  corpus.split = split;
  long attempts = 0;
  const long max_attempts = 200L * spec.n_pairs + 1000;
  while (static_cast<int>(corpus.pairs.size()) < spec.n_pairs) {
    if (++attempts > max_attempts) {
      throw std::invalid_argument(
          "gen_synthetic: source space too small for the requested number of unique pairs");
    }
    std::vector<std::string> src, tgt;
    if (spec.task == SyntheticTask::KeyedDialog) {
      auto s = detail::sample_keyed_source(spec, rng);
      src = s.source;
      const bool dull = rng.bernoulli(spec.dull_fraction);
      tgt = (apply_dull && dull) ? keyed::dull_response() : keyed::response_for_key(s.key);
    } else {
      src = detail::sample_word_source(spec, rng);
      tgt = src;
      if (spec.task == SyntheticTask::Reverse) std::reverse(tgt.begin(), tgt.end());
    }
    if (!seen.insert(detail::join(src)).second) continue;
    corpus.pairs.push_back({vocab.encode(src), vocab.encode(tgt)});
  }
  return corpus;
}

struct SyntheticSplits {
  Corpus train, dev, test;
  Vocabulary vocab;
};

// Three disjoint splits from one seed. The dull substitution applies to the
// training split only: evaluation references stay informative, the way held
// out scripted dialogue is cleaner than the web-scale training soup.
inline SyntheticSplits gen_synthetic_splits(SyntheticSpec spec, int n_train, int n_dev,
                                            int n_test) {
  SyntheticSplits out;
  std::set<std::string> seen;
  SyntheticSpec s = spec;
  s.n_pairs = n_train;
  s.seed = Rng::fold(spec.seed, 101);
  out.train = gen_synthetic(s, out.vocab, Split::Train, true, &seen);
  s.n_pairs = n_dev;
  s.seed = Rng::fold(spec.seed, 102);
  out.dev = gen_synthetic(s, out.vocab, Split::Dev, false, &seen);
  s.n_pairs = n_test;
  s.seed = Rng::fold(spec.seed, 103);
  out.test = gen_synthetic(s, out.vocab, Split::Test, false, &seen);
  return out;
}

}  // namespace narmi
