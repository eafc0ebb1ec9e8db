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

// Brute-force verifiers. These enumerate the whole candidate space and score
// each sequence with the two sequence-level terms (forward row sums plus the
// geometric-mean backward score), deliberately sharing no combination logic
// with the per-token decoder they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/backward_model.hpp"
#include "narmi/forward_model.hpp"
#include "narmi/mmi.hpp"
#include "narmi/vocab.hpp"

namespace narmi {

struct ScoredSequence {
  TokenSequence tokens;
  double score = 0.0;
};

namespace detail {

constexpr double kEnumerationGuard = 1e6;

inline void check_enumeration_guard(int vocab_size, int target_len) {
  const int candidates = vocab_size - Vocabulary::kNumReserved;
  if (candidates < 1) throw std::invalid_argument("oracle: vocabulary has no real tokens");
  const double space = std::pow(static_cast<double>(candidates), target_len);
  if (space > kEnumerationGuard) {
    throw std::invalid_argument(
        "oracle: refusing to enumerate " + std::to_string(candidates) + "^" +
        std::to_string(target_len) + " sequences (guard is 10^6 evaluations)");
  }
}

// (forward row sum, backward sequence score) for every sequence of the given
// length, in lexicographic token order.
struct EnumeratedScores {
  std::vector<TokenSequence> sequences;
  std::vector<double> fwd_sum;
  std::vector<double> bwd_score;
};

inline EnumeratedScores enumerate_scores(const TokenSequence& x, int target_len,
                                         const ForwardModel& fwd, const BackwardModel& bwd,
                                         bool need_backward) {
  check_enumeration_guard(fwd.vocab_size(), target_len);
  autograd::NoGradGuard ng;
  EnumeratedScores out;
  Tensor flp = fwd.logprobs(x, target_len);
  const int v = fwd.vocab_size();
  TokenSequence current(target_len, Vocabulary::kNumReserved);
  while (true) {
    double fs = 0.0;
    for (int t = 0; t < target_len; ++t) fs += flp.at(t, current[t]);
    out.sequences.push_back(current);
    out.fwd_sum.push_back(fs);
    out.bwd_score.push_back(need_backward ? bwd.sequence_score(x, current) : 0.0);
    // lexicographic increment over non-reserved ids
    int pos = target_len - 1;
    while (pos >= 0) {
      if (++current[pos] < v) break;
      current[pos] = Vocabulary::kNumReserved;
      --pos;
    }
    if (pos < 0) break;
  }
  return out;
}

}  // namespace detail

// Exhaustive argmax of the mutual-information objective over every sequence
// of the given length (reserved tokens excluded). Ties break toward the
// lexicographically smallest token ids.
inline ScoredSequence brute_force_mmi_argmax(const TokenSequence& x, int target_len,
                                             double lambda, const ForwardModel& fwd,
                                             const BackwardModel& bwd) {
  check_lambda(lambda);
  auto scores = detail::enumerate_scores(x, target_len, fwd, bwd, lambda > 0.0);
  ScoredSequence best;
  bool first = true;
  for (std::size_t i = 0; i < scores.sequences.size(); ++i) {
    const double total = (1.0 - lambda) * scores.fwd_sum[i] + lambda * scores.bwd_score[i];
    if (first || total > best.score) {
      best = {scores.sequences[i], total};
      first = false;
    }
  }
  return best;
}

// Full enumeration, sorted by score (descending) with lexicographic
// tie-break, truncated to k.
inline std::vector<ScoredSequence> brute_force_kbest(const TokenSequence& x, int target_len,
                                                     double lambda, int k,
                                                     const ForwardModel& fwd,
                                                     const BackwardModel& bwd) {
  check_lambda(lambda);
  if (k < 1) throw std::invalid_argument("brute_force_kbest: k must be >= 1");
  auto scores = detail::enumerate_scores(x, target_len, fwd, bwd, lambda > 0.0);
  std::vector<ScoredSequence> all;
  all.reserve(scores.sequences.size());
  for (std::size_t i = 0; i < scores.sequences.size(); ++i) {
    all.push_back({scores.sequences[i],
                   (1.0 - lambda) * scores.fwd_sum[i] + lambda * scores.bwd_score[i]});
  }
  // enumeration order is lexicographic, so a stable sort by score keeps the
  // lexicographic order inside every tie group
  std::stable_sort(all.begin(), all.end(),
                   [](const ScoredSequence& a, const ScoredSequence& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  return all;
}

// One enumeration pass shared by several lambda values; scores are
// length-level (fwd_sum, bwd_score) pairs combined per lambda, so the
// sweep stays within the oracle's two-term route.
inline std::vector<ScoredSequence> brute_force_mmi_argmax_sweep(
    const TokenSequence& x, int target_len, const std::vector<double>& lambdas,
    const ForwardModel& fwd, const BackwardModel& bwd) {
  for (double l : lambdas) check_lambda(l);
  bool need_bwd = false;
  for (double l : lambdas) need_bwd = need_bwd || l > 0.0;
  auto scores = detail::enumerate_scores(x, target_len, fwd, bwd, need_bwd);
  std::vector<ScoredSequence> best(lambdas.size());
  std::vector<bool> first(lambdas.size(), true);
  for (std::size_t i = 0; i < scores.sequences.size(); ++i) {
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
      const double total = (1.0 - lambdas[li]) * scores.fwd_sum[i] +
                           lambdas[li] * scores.bwd_score[i];
      if (first[li] || total > best[li].score) {
        best[li] = {scores.sequences[i], total};
        first[li] = false;
      }
    }
  }
  return best;
}

}  // namespace narmi
