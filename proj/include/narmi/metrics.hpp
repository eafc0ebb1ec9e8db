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
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/rng.hpp"

namespace narmi {

using Sentence = std::vector<std::string>;

namespace detail {

inline std::map<std::string, int> ngram_counts(const Sentence& s, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(s.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += s[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

// Corpus-level BLEU-4 with brevity penalty. Unigram precision is raw;
// higher-order precisions get add-one smoothing so short corpora do not
// zero out the whole score.
inline double bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  if (hyps.empty()) throw std::invalid_argument("bleu: empty corpus");
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                                std::to_string(refs.size()) + " references");
  }
  constexpr int kMaxOrder = 4;
  long long total[kMaxOrder] = {0, 0, 0, 0};
  long long correct[kMaxOrder] = {0, 0, 0, 0};
  long long hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<long long>(hyps[i].size());
    ref_len += static_cast<long long>(refs[i].size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      auto hc = detail::ngram_counts(hyps[i], n);
      auto rc = detail::ngram_counts(refs[i], n);
      for (const auto& [gram, count] : hc) {
        total[n - 1] += count;
        auto it = rc.find(gram);
        if (it != rc.end()) correct[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_prec_sum = 0.0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    double num = static_cast<double>(correct[n - 1]);
    double den = static_cast<double>(total[n - 1]);
    if (n >= 2) {
      num += 1.0;
      den += 1.0;
    }
    if (num == 0.0 || den == 0.0) return 0.0;
    log_prec_sum += std::log(num / den);
  }
  const double bp =
      hyp_len > ref_len ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) /
                                             static_cast<double>(hyp_len));
  return bp * std::exp(log_prec_sum / kMaxOrder);
}

// Unique n-grams across the whole response set over total n-grams.
inline double distinct_n(const std::vector<Sentence>& responses, int n) {
  if (n != 1 && n != 2) throw std::invalid_argument("distinct_n: n must be 1 or 2");
  if (responses.empty()) throw std::invalid_argument("distinct_n: empty response set");
  std::set<std::string> unique;
  long long total = 0;
  for (const auto& r : responses) {
    for (const auto& [gram, count] : detail::ngram_counts(r, n)) {
      unique.insert(gram);
      total += count;
    }
  }
  if (total == 0) throw std::invalid_argument("distinct_n: no n-grams in response set");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

inline double avg_length(const std::vector<Sentence>& responses) {
  if (responses.empty()) throw std::invalid_argument("avg_length: empty response set");
  long long total = 0;
  for (const auto& r : responses) total += static_cast<long long>(r.size());
  return static_cast<double>(total) / static_cast<double>(responses.size());
}

inline std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read stopword list " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line[0] != '#') words.insert(line);
  }
  return words;
}

// Percentage of tokens that are stopwords or punctuation.
inline double stopword_pct(const std::vector<Sentence>& responses,
                           const std::set<std::string>& stopwords) {
  long long total = 0, stop = 0;
  for (const auto& r : responses) {
    for (const auto& tok : r) {
      ++total;
      if (stopwords.count(tok)) ++stop;
    }
  }
  if (total == 0) throw std::invalid_argument("stopword_pct: no tokens");
  return 100.0 * static_cast<double>(stop) / static_cast<double>(total);
}

struct MetricsReport {
  double bleu = 0.0;
  double distinct1 = 0.0;
  double distinct2 = 0.0;
  double avg_len = 0.0;
  double stopword_pct = 0.0;

  // key=value lines, fixed key set, 4 decimal places
  std::string to_string() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "bleu=%.4f\ndistinct1=%.4f\ndistinct2=%.4f\navg_len=%.4f\n"
                  "stopword_pct=%.4f\n",
                  bleu, distinct1, distinct2, avg_len, stopword_pct);
    return buf;
  }
};

inline MetricsReport compute_metrics(const std::vector<Sentence>& hyps,
                                     const std::vector<Sentence>& refs,
                                     const std::set<std::string>& stopwords) {
  MetricsReport r;
  r.bleu = bleu(hyps, refs);
  r.distinct1 = distinct_n(hyps, 1);
  r.distinct2 = distinct_n(hyps, 2);
  r.avg_len = avg_length(hyps);
  r.stopword_pct = stopword_pct(hyps, stopwords);
  return r;
}

// Paired bootstrap over corpus-level metric values: resamples items with
// replacement and reports the fraction of resamples where system A fails to
// beat system B. Small values mean A's advantage is stable.
inline double paired_bootstrap(
    const std::function<double(const std::vector<std::size_t>&)>& metric_a,
    const std::function<double(const std::vector<std::size_t>&)>& metric_b,
    std::size_t n_items, int resamples, std::uint64_t seed) {
  if (n_items == 0) throw std::invalid_argument("paired_bootstrap: no items");
  Rng rng(seed);
  int not_better = 0;
  for (int r = 0; r < resamples; ++r) {
    std::vector<std::size_t> idx(n_items);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, n_items - 1));
    if (metric_a(idx) <= metric_b(idx)) ++not_better;
  }
  return static_cast<double>(not_better) / static_cast<double>(resamples);
}

}  // namespace narmi
