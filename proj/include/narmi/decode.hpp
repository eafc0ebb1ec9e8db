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

// Decoders. The per-token objective is separable across positions, so the
// exact argmax is the vector of per-position argmaxes and the exact k-best
// comes from a lazy best-first enumeration over the per-position candidate
// lists: start from the all-argmax sequence, and each popped sequence spawns
// successors by bumping a single position to its next-ranked token. A
// visited set keeps the frontier duplicate-free; every parent precedes its
// successors in (score, lexicographic) order, so pops arrive exactly
// sorted. Autoregressive baselines use beam search with an optional sibling
// penalty and MMI reranking of the finished list.

#pragma once

#include <algorithm>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/ar_model.hpp"
#include "narmi/backward_model.hpp"
#include "narmi/forward_model.hpp"
#include "narmi/mmi.hpp"
#include "narmi/vocab.hpp"

namespace narmi {

struct DecodeConfig {
  double lambda = 0.4;
  int nbest = 10;          // N
  int len_candidates = 4;  // length classes considered for the N-best pool
  int tok_candidates = 5;  // per-position candidate tokens kept in k-best
  int beam = 10;
  double sibling_penalty = 1.0;  // gamma, applied only by the diverse variant
  enum class TieBreak { LowestId, HighestId };
  // HighestId exists as a corruption hook for the oracle's negative test.
  TieBreak tie_break = TieBreak::LowestId;

  void validate() const {
    check_lambda(lambda);
    if (nbest < 1 || len_candidates < 1 || tok_candidates < 1 || beam < 1) {
      throw std::invalid_argument("decode config: counts must be >= 1");
    }
    if (sibling_penalty < 0.0) {
      throw std::invalid_argument("decode config: sibling penalty must be >= 0");
    }
  }
};

struct Candidate {
  TokenSequence tokens;
  MmiScoreBreakdown breakdown;
  // provenance: which length-class rank and k-best rank produced it
  int length_rank = 0;
  int kbest_rank = 0;
};

// ---------------------------------------------------------------------------
// non-AR decoding
// ---------------------------------------------------------------------------

// Per-position score tables for one (source, target length): everything the
// separable objective needs. Computing them once and reusing across lambda
// values makes sweeps cheap; only the backward half costs model passes.
struct MmiTables {
  int target_len = 0;
  std::vector<std::vector<double>> fwd;  // [m][V] log p(v at t | x)
  std::vector<std::vector<double>> bwd;  // [m][V] sum_t' log p(x_t' | v at t)
  bool has_bwd = false;
};

inline MmiTables mmi_decode_tables(const TokenSequence& x, int target_len,
                                   const ForwardModel& fwd, const BackwardModel* bwd) {
  autograd::NoGradGuard ng;
  MmiTables tables;
  tables.target_len = target_len;
  const int v = fwd.vocab_size();
  Tensor flp = fwd.logprobs(x, target_len);
  tables.fwd.assign(target_len, std::vector<double>(v, 0.0));
  for (int t = 0; t < target_len; ++t)
    for (int j = 0; j < v; ++j) tables.fwd[t][j] = flp.at(t, j);
  if (bwd) {
    tables.has_bwd = true;
    const int lx = static_cast<int>(x.size());
    tables.bwd.assign(target_len, std::vector<double>(v, 0.0));
    for (int t = 1; t <= target_len; ++t) {
      for (int tok = Vocabulary::kNumReserved; tok < v; ++tok) {
        Tensor blp = bwd->logprobs(tok, t, target_len, lx);
        double s = 0.0;
        for (int tp = 0; tp < lx; ++tp) s += blp.at(tp, x[tp]);
        tables.bwd[t - 1][tok] = s;
      }
    }
  }
  return tables;
}

namespace detail {

inline bool better_token(double score, int tok, double best_score, int best_tok,
                         DecodeConfig::TieBreak tie) {
  if (score != best_score) return score > best_score;
  return tie == DecodeConfig::TieBreak::LowestId ? tok < best_tok : tok > best_tok;
}

// Per-position MMI scores for every non-reserved token.
inline std::vector<std::vector<double>> position_scores(const MmiTables& tables,
                                                        double lambda) {
  const int m = tables.target_len;
  std::vector<std::vector<double>> scores(m);
  for (int t = 0; t < m; ++t) {
    const int v = static_cast<int>(tables.fwd[t].size());
    scores[t].assign(v, 0.0);
    for (int tok = 0; tok < v; ++tok) {
      const double bwd_t = tables.has_bwd ? tables.bwd[t][tok] : 0.0;
      scores[t][tok] = per_token_mmi(tables.fwd[t][tok], bwd_t, lambda, m);
    }
  }
  return scores;
}

inline Candidate candidate_from_tokens(const MmiTables& tables, const TokenSequence& tokens,
                                       double lambda) {
  Candidate c;
  c.tokens = tokens;
  c.breakdown.lambda = lambda;
  for (int t = 0; t < tables.target_len; ++t) {
    c.breakdown.fwd.push_back(tables.fwd[t][tokens[t]]);
    c.breakdown.bwd.push_back(tables.has_bwd ? tables.bwd[t][tokens[t]] : 0.0);
  }
  c.breakdown.total = c.breakdown.recompute_total();
  return c;
}

}  // namespace detail

// Plain parallel decode: predicted length, per-position forward argmax.
inline Candidate nonar_argmax_decode(const TokenSequence& x, const ForwardModel& fwd,
                                     DecodeConfig::TieBreak tie =
                                         DecodeConfig::TieBreak::LowestId) {
  const int m = fwd.predict_target_len(x);
  auto tables = detail::mmi_tables(x, m, fwd, nullptr);
  TokenSequence tokens(m);
  for (int t = 0; t < m; ++t) {
    int best = Vocabulary::kNumReserved;
    for (int tok = Vocabulary::kNumReserved + 1; tok < static_cast<int>(tables.fwd[t].size());
         ++tok) {
      if (detail::better_token(tables.fwd[t][tok], tok, tables.fwd[t][best], best, tie))
        best = tok;
    }
    tokens[t] = best;
  }
  return detail::candidate_from_tokens(tables, tokens, 0.0);
}

// Per-token MMI decode: y_t = argmax over tokens of the separable objective.
// With lambda = 0 the backward model is never consulted and the result
// equals the plain forward argmax token for token.
inline Candidate nonar_mmi_decode(const TokenSequence& x, double lambda,
                                  const ForwardModel& fwd, const BackwardModel& bwd,
                                  DecodeConfig::TieBreak tie =
                                      DecodeConfig::TieBreak::LowestId) {
  check_lambda(lambda);
  const int m = fwd.predict_target_len(x);
  auto tables = detail::mmi_tables(x, m, fwd, lambda > 0.0 ? &bwd : nullptr);
  auto scores = detail::position_scores(tables, lambda);
  TokenSequence tokens(m);
  for (int t = 0; t < m; ++t) {
    int best = Vocabulary::kNumReserved;
    for (int tok = Vocabulary::kNumReserved + 1; tok < static_cast<int>(scores[t].size());
         ++tok) {
      if (detail::better_token(scores[t][tok], tok, scores[t][best], best, tie)) best = tok;
    }
    tokens[t] = best;
  }
  return detail::candidate_from_tokens(tables, tokens, lambda);
}

namespace detail {

// Exact k-best over independent positions (see file comment). Candidate
// lists per position arrive sorted by (score desc, id asc); the comparator
// on whole sequences is (total desc, tokens lexicographically asc).
struct KbestEntry {
  double score;
  TokenSequence tokens;
  std::vector<int> ranks;
};

struct KbestWorse {
  bool operator()(const KbestEntry& a, const KbestEntry& b) const {
    if (a.score != b.score) return a.score < b.score;
    return a.tokens > b.tokens;
  }
};

inline std::vector<TokenSequence> kbest_independent(
    const std::vector<std::vector<std::pair<double, int>>>& per_pos, int k) {
  const int m = static_cast<int>(per_pos.size());
  for (const auto& lst : per_pos) {
    if (lst.empty()) throw std::invalid_argument("k-best: empty candidate list");
  }
  auto assemble = [&](const std::vector<int>& ranks) {
    KbestEntry e;
    e.ranks = ranks;
    e.tokens.resize(m);
    e.score = 0.0;
    for (int t = 0; t < m; ++t) {
      e.score += per_pos[t][ranks[t]].first;
      e.tokens[t] = per_pos[t][ranks[t]].second;
    }
    return e;
  };
  std::priority_queue<KbestEntry, std::vector<KbestEntry>, KbestWorse> frontier;
  std::set<std::vector<int>> queued;
  std::vector<int> root(m, 0);
  frontier.push(assemble(root));
  queued.insert(root);
  std::vector<TokenSequence> out;
  while (!frontier.empty() && static_cast<int>(out.size()) < k) {
    KbestEntry top = frontier.top();
    frontier.pop();
    out.push_back(top.tokens);
    for (int t = 0; t < m; ++t) {
      if (top.ranks[t] + 1 >= static_cast<int>(per_pos[t].size())) continue;
      std::vector<int> next = top.ranks;
      ++next[t];
      if (queued.insert(next).second) frontier.push(assemble(next));
    }
  }
  return out;
}

}  // namespace detail

// Exact k-best candidates of one target length under the separable
// objective, largest score first.
inline std::vector<Candidate> nonar_nbest_at_length(const TokenSequence& x, int target_len,
                                                    double lambda, int k, int tok_candidates,
                                                    const ForwardModel& fwd,
                                                    const BackwardModel& bwd) {
  check_lambda(lambda);
  auto tables = detail::mmi_tables(x, target_len, fwd, lambda > 0.0 ? &bwd : nullptr);
  auto scores = detail::position_scores(tables, lambda);
  std::vector<std::vector<std::pair<double, int>>> per_pos(target_len);
  for (int t = 0; t < target_len; ++t) {
    for (int tok = Vocabulary::kNumReserved; tok < static_cast<int>(scores[t].size()); ++tok) {
      per_pos[t].push_back({scores[t][tok], tok});
    }
    std::sort(per_pos[t].begin(), per_pos[t].end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    if (static_cast<int>(per_pos[t].size()) > tok_candidates) per_pos[t].resize(tok_candidates);
  }
  std::vector<Candidate> out;
  int rank = 0;
  for (const auto& tokens : detail::kbest_independent(per_pos, k)) {
    Candidate c = detail::candidate_from_tokens(tables, tokens, lambda);
    c.kbest_rank = rank++;
    out.push_back(std::move(c));
  }
  return out;
}

// N-best across the top length classes: per length the exact k-best under
// the separable objective, pooled and globally sorted by total score.
inline std::vector<Candidate> nonar_nbest(const TokenSequence& x, double lambda,
                                          const DecodeConfig& cfg, const ForwardModel& fwd,
                                          const BackwardModel& bwd) {
  cfg.validate();
  check_lambda(lambda);
  std::vector<int> lengths;
  for (int cls : fwd.top_length_classes(x, cfg.len_candidates)) {
    const int len =
        fwd.clamp_target_len(static_cast<int>(x.size()) + len_class_to_delta(cls));
    // clamping can collapse two classes onto one length; keep the first
    if (std::find(lengths.begin(), lengths.end(), len) == lengths.end())
      lengths.push_back(len);
  }
  std::vector<Candidate> pool;
  for (std::size_t li = 0; li < lengths.size(); ++li) {
    for (Candidate& c :
         nonar_nbest_at_length(x, lengths[li], lambda, cfg.nbest, cfg.tok_candidates, fwd,
                               bwd)) {
      c.length_rank = static_cast<int>(li);
      pool.push_back(std::move(c));
    }
  }
  std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    if (a.breakdown.total != b.breakdown.total) return a.breakdown.total > b.breakdown.total;
    return a.tokens < b.tokens;
  });
  if (static_cast<int>(pool.size()) > cfg.nbest) pool.resize(cfg.nbest);
  return pool;
}

// ---------------------------------------------------------------------------
// AR decoding
// ---------------------------------------------------------------------------

struct BeamHypothesis {
  TokenSequence tokens;
  double logprob = 0.0;  // true cumulative log-prob including the <eos> step
  int parent_beam = 0;   // beam slot of the parent at the last expansion
  bool finished = false;
};

namespace detail {

// Candidate continuations: real tokens always, <eos> once something has
// been emitted (decoders never return empty sequences).
inline std::vector<int> ar_allowed_tokens(int vocab_size, bool allow_eos) {
  std::vector<int> ids;
  if (allow_eos) ids.push_back(Vocabulary::kEos);
  for (int tok = Vocabulary::kNumReserved; tok < vocab_size; ++tok) ids.push_back(tok);
  return ids;
}

}  // namespace detail

// Greedy reference decoder: at each step take the most probable
// continuation, stop at <eos> or max_len. Hypotheses cut off at max_len are
// finalized with the <eos> log-probability so every returned score is the
// full teacher-forced sequence log-prob.
inline BeamHypothesis ar_greedy(const TokenSequence& x, int max_len, const ArModel& ar) {
  autograd::NoGradGuard ng;
  Tensor h = ar.encode_source(x);
  BeamHypothesis hyp;
  for (int step = 0; step < max_len; ++step) {
    auto lp = ar.next_token_logprobs(h, hyp.tokens);
    int best = -1;
    for (int tok : detail::ar_allowed_tokens(ar.vocab_size(), !hyp.tokens.empty())) {
      if (best < 0 || lp[tok] > lp[best]) best = tok;
    }
    hyp.logprob += lp[best];
    if (best == Vocabulary::kEos) {
      hyp.finished = true;
      return hyp;
    }
    hyp.tokens.push_back(best);
  }
  hyp.logprob += ar.next_token_logprobs(h, hyp.tokens)[Vocabulary::kEos];
  hyp.finished = true;
  return hyp;
}

// Beam search from <bos> to <eos> or max_len. gamma > 0 demotes each
// expansion by gamma times its rank among the same parent's children
// (selection only; stored log-probs stay unpenalized). gamma = 0 is vanilla
// beam search.
inline std::vector<BeamHypothesis> ar_beam_search(const TokenSequence& x, int beam,
                                                  int max_len, double gamma,
                                                  const ArModel& ar) {
  if (beam < 1) throw std::invalid_argument("beam search: beam must be >= 1");
  if (gamma < 0.0) throw std::invalid_argument("beam search: negative sibling penalty");
  autograd::NoGradGuard ng;
  Tensor h = ar.encode_source(x);
  std::vector<BeamHypothesis> live(1);
  std::vector<BeamHypothesis> finished;

  struct Expansion {
    double select_score;  // penalized, used for pruning
    double true_score;
    int parent;
    int token;
  };

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Expansion> expansions;
    for (std::size_t bi = 0; bi < live.size(); ++bi) {
      const auto lp = ar.next_token_logprobs(h, live[bi].tokens);
      auto allowed = detail::ar_allowed_tokens(ar.vocab_size(), !live[bi].tokens.empty());
      // rank children of this parent by their step log-prob
      std::sort(allowed.begin(), allowed.end(), [&](int a, int b) {
        if (lp[a] != lp[b]) return lp[a] > lp[b];
        return a < b;
      });
      for (std::size_t r = 0; r < allowed.size(); ++r) {
        const int tok = allowed[r];
        const double true_score = live[bi].logprob + lp[tok];
        expansions.push_back({true_score - gamma * static_cast<double>(r + 1), true_score,
                              static_cast<int>(bi), tok});
      }
    }
    std::sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
      if (a.select_score != b.select_score) return a.select_score > b.select_score;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    if (static_cast<int>(expansions.size()) > beam) expansions.resize(beam);
    std::vector<BeamHypothesis> next;
    for (const auto& e : expansions) {
      BeamHypothesis hyp = live[e.parent];
      hyp.logprob = e.true_score;
      hyp.parent_beam = e.parent;
      if (e.token == Vocabulary::kEos) {
        hyp.finished = true;
        finished.push_back(std::move(hyp));
      } else {
        hyp.tokens.push_back(e.token);
        next.push_back(std::move(hyp));
      }
    }
    live = std::move(next);
  }
  for (auto& hyp : live) {
    hyp.logprob += ar.next_token_logprobs(h, hyp.tokens)[Vocabulary::kEos];
    hyp.finished = true;
    finished.push_back(std::move(hyp));
  }
  std::sort(finished.begin(), finished.end(),
            [](const BeamHypothesis& a, const BeamHypothesis& b) {
              if (a.logprob != b.logprob) return a.logprob > b.logprob;
              return a.tokens < b.tokens;
            });
  if (static_cast<int>(finished.size()) > beam) finished.resize(beam);
  return finished;
}

struct RerankedHypothesis {
  BeamHypothesis hyp;
  double mmi_score = 0.0;
};

// (1 - lambda) * log p(y|x) + lambda * log p(x|y) over an N-best list.
// The forward term is the hypothesis' stored beam score; the backward term
// comes from teacher-forcing the reverse-direction model. The sort is
// stable, so lambda = 0 preserves the incoming beam order exactly.
inline std::vector<RerankedHypothesis> ar_mmi_rerank(const std::vector<BeamHypothesis>& nbest,
                                                     double lambda, const TokenSequence& x,
                                                     const ArModel& ar_bwd) {
  check_lambda(lambda);
  if (nbest.empty()) throw std::invalid_argument("ar_mmi_rerank: empty N-best list");
  std::vector<RerankedHypothesis> out;
  out.reserve(nbest.size());
  for (const auto& hyp : nbest) {
    const double bwd =
        lambda > 0.0 ? ar_bwd.sequence_logprob(hyp.tokens, x) : 0.0;
    out.push_back({hyp, (1.0 - lambda) * hyp.logprob + lambda * bwd});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const RerankedHypothesis& a, const RerankedHypothesis& b) {
                     return a.mmi_score > b.mmi_score;
                   });
  return out;
}

// Tailored noisy-parallel decoding selector: among non-AR candidates, pick
// the one with the highest AR mutual-information score, both directions
// teacher-forced. Ties keep the earlier list rank.
inline Candidate npd_mmi_select(const TokenSequence& x, const std::vector<Candidate>& cands,
                                double lambda, const ArModel& ar_fwd, const ArModel& ar_bwd) {
  check_lambda(lambda);
  if (cands.empty()) throw std::invalid_argument("npd_mmi_select: empty candidate list");
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double fwd = ar_fwd.sequence_logprob(x, cands[i].tokens);
    const double bwd = lambda > 0.0 ? ar_bwd.sequence_logprob(cands[i].tokens, x) : 0.0;
    const double score = (1.0 - lambda) * fwd + lambda * bwd;
    if (i == 0 || score > best_score) {
      best = i;
      best_score = score;
    }
  }
  return cands[best];
}

}  // namespace narmi
