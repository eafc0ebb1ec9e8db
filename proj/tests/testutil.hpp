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

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "narmi/tensor.hpp"

namespace narmi::test {

// Central finite differences against the analytic gradient, per leaf.
// The loss builder must rebuild the graph from the leaves on every call.
struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_leaf;
};

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline FdReport fd_check(std::vector<std::pair<std::string, Tensor>> leaves,
                         const std::function<Tensor()>& loss, double h = 1e-5) {
  FdReport report;
  for (auto& [name, leaf] : leaves) leaf.zero_grad();
  Tensor l0 = loss();
  zero_graph_grads(l0);
  backward(l0);
  for (auto& [name, leaf] : leaves) {
    std::vector<double> analytic = leaf.grad();
    std::vector<double> numeric(leaf.numel());
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      const double keep = leaf.value()[i];
      leaf.value()[i] = keep + h;
      const double up = loss().item();
      leaf.value()[i] = keep - h;
      const double down = loss().item();
      leaf.value()[i] = keep;
      numeric[i] = (up - down) / (2.0 * h);
    }
    std::vector<double> diff(analytic.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
    const double denom = std::max({norm(analytic), norm(numeric), 1e-12});
    const double rel = norm(diff) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_leaf = name;
    }
  }
  return report;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.value()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace narmi::test
