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
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "narmi/rng.hpp"
#include "narmi/tensor.hpp"

namespace narmi {

// Named collection of trainable tensors. Registration order is fixed and
// drives checkpoint layout, optimizer state layout, and gradient checks.
class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    if (!t.requires_grad()) throw std::invalid_argument("parameter must require grad: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& tensor(std::size_t i) { return tensors_.at(i); }
  const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return tensors_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

inline Tensor xavier(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (auto& v : t.value()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor normal(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.value()) v = rng.normal(0.0, stddev);
  return t;
}

inline Tensor zeros(std::vector<int> shape) { return Tensor::zeros(std::move(shape), true); }

inline Tensor ones(std::vector<int> shape) { return Tensor::ones(std::move(shape), true); }

}  // namespace init

}  // namespace narmi
