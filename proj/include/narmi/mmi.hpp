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

// The factorized mutual-information objective. Everything stays in log
// space; forward/backward products are never materialized as probabilities.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "narmi/backward_model.hpp"
#include "narmi/forward_model.hpp"

namespace narmi {

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
}

// (1 - lambda) * log p(y_t | x)  +  (lambda / L_y) * sum_t' log p(x_t' | y_t)
inline double per_token_mmi(double fwd_t, double bwd_t, double lambda, int target_len) {
  check_lambda(lambda);
  if (target_len < 1) throw std::invalid_argument("per_token_mmi: target length must be >= 1");
  return (1.0 - lambda) * fwd_t + lambda / static_cast<double>(target_len) * bwd_t;
}

struct MmiScoreBreakdown {
  std::vector<double> fwd;  // log p(y_t | x), one per target position
  std::vector<double> bwd;  // sum_t' log p(x_t' | y_t), one per target position
  double lambda = 0.0;
  double total = 0.0;  // sum of per-token terms, exactly as accumulated

  int target_len() const { return static_cast<int>(fwd.size()); }

  double recompute_total() const {
    double s = 0.0;
    for (std::size_t t = 0; t < fwd.size(); ++t) {
      s += per_token_mmi(fwd[t], bwd[t], lambda, static_cast<int>(fwd.size()));
    }
    return s;
  }

  // The same objective assembled as two sequence-level terms; used by
  // identity checks against the per-token accumulation.
  double two_term_total() const {
    double fs = 0.0, bs = 0.0;
    for (double v : fwd) fs += v;
    for (double v : bwd) bs += v;
    return (1.0 - lambda) * fs + lambda / static_cast<double>(fwd.size()) * bs;
  }
};

// Full evaluation of the objective for a given candidate sequence.
inline MmiScoreBreakdown mmi_objective(const TokenSequence& x, const TokenSequence& y,
                                       double lambda, const ForwardModel& fwd,
                                       const BackwardModel& bwd) {
  check_lambda(lambda);
  if (y.empty()) throw std::invalid_argument("mmi_objective: empty candidate");
  autograd::NoGradGuard ng;
  const int ly = static_cast<int>(y.size());
  const int lx = static_cast<int>(x.size());
  MmiScoreBreakdown out;
  out.lambda = lambda;
  Tensor flp = fwd.logprobs(x, ly);
  for (int t = 0; t < ly; ++t) out.fwd.push_back(flp.at(t, y[t]));
  for (int t = 1; t <= ly; ++t) {
    double s = 0.0;
    if (lambda > 0.0) {
      Tensor blp = bwd.logprobs(y[t - 1], t, ly, lx);
      for (int tp = 0; tp < lx; ++tp) s += blp.at(tp, x[tp]);
    }
    out.bwd.push_back(s);
  }
  out.total = out.recompute_total();
  return out;
}

}  // namespace narmi
