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

// Dense fp64 tensors with reverse-mode automatic differentiation.
//
// Graphs are built eagerly: every op records its parents and a backward
// closure on the output node. backward() runs the closures in reverse
// topological order and accumulates into .grad. Tensors are handles with
// shared state; copying a Tensor aliases the underlying node.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "narmi/rng.hpp"

namespace narmi {

namespace autograd {

// Thread-local so concurrent inference threads can disable taping
// independently of a training thread.
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace autograd

struct TensorData;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor ones(std::vector<int> shape, bool requires_grad = false) {
    return full(std::move(shape), 1.0, requires_grad);
  }
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::size_t numel() const;
  // 2D accessors.
  int rows() const { return shape().at(0); }
  int cols() const { return shape().at(1); }

  std::vector<double>& value();
  const std::vector<double>& value() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool requires_grad() const;

  double item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor is not a scalar");
    return value()[0];
  }
  double at(int r, int c) const {
    return value()[static_cast<std::size_t>(r) * cols() + c];
  }

  void zero_grad();

  TensorData* node() const { return node_.get(); }

 private:
  std::shared_ptr<TensorData> node_;
  friend Tensor detail_make(std::vector<int>, bool);
};

struct TensorData {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(TensorData&)> backward_fn;
};

namespace detail {

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw std::invalid_argument("tensor shape has negative extent");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace detail

inline Tensor detail_make(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  auto node = std::make_shared<TensorData>();
  node->shape = std::move(shape);
  node->value.assign(detail::shape_numel(node->shape), 0.0);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), 0.0);
  t.node_ = std::move(node);
  return t;
}

inline Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return detail_make(std::move(shape), requires_grad);
}

inline Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  Tensor t = detail_make(std::move(shape), requires_grad);
  std::fill(t.value().begin(), t.value().end(), v);
  return t;
}

inline Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
  std::size_t n = detail::shape_numel(shape);
  if (n != values.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + detail::shape_str(shape));
  }
  Tensor t = detail_make(std::move(shape), requires_grad);
  t.value() = std::move(values);
  return t;
}

inline const std::vector<int>& Tensor::shape() const { return node_->shape; }
inline std::size_t Tensor::numel() const { return node_->value.size(); }
inline std::vector<double>& Tensor::value() { return node_->value; }
inline const std::vector<double>& Tensor::value() const { return node_->value; }
inline bool Tensor::requires_grad() const { return node_->requires_grad; }

inline std::vector<double>& Tensor::grad() {
  if (!node_->requires_grad) throw std::logic_error("grad(): tensor does not require grad");
  return node_->grad;
}
inline const std::vector<double>& Tensor::grad() const {
  if (!node_->requires_grad) throw std::logic_error("grad(): tensor does not require grad");
  return node_->grad;
}

inline void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

namespace detail {

inline bool any_requires_grad(const std::vector<Tensor>& ts) {
  for (const auto& t : ts) {
    if (t.requires_grad()) return true;
  }
  return false;
}

// Output node for an op: tapes parents only when grad mode is on and some
// parent participates in differentiation.
inline Tensor op_output(std::vector<int> shape, std::vector<Tensor> parents) {
  bool rg = autograd::grad_enabled() && any_requires_grad(parents);
  Tensor out = detail_make(std::move(shape), rg);
  if (rg) out.node()->parents = std::move(parents);
  return out;
}

// C[m x n] += A[m x k] * B[k x n]
inline void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    const double* bi = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2D tensor, got shape " +
                                shape_str(t.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / linear algebra ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  }
  Tensor out = detail::op_output(a.shape(), {a, b});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + b.value()[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorData& o) {
      for (int p = 0; p < 2; ++p) {
        Tensor& t = o.parents[p];
        if (!t.requires_grad()) continue;
        auto& g = t.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    };
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub: shape mismatch " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  }
  Tensor out = detail::op_output(a.shape(), {a, b});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] - b.value()[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorData& o) {
      if (o.parents[0].requires_grad()) {
        auto& g = o.parents[0].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (o.parents[1].requires_grad()) {
        auto& g = o.parents[1].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
      }
    };
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  }
  Tensor out = detail::op_output(a.shape(), {a, b});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * b.value()[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorData& o) {
      const auto& av = o.parents[0].value();
      const auto& bv = o.parents[1].value();
      if (o.parents[0].requires_grad()) {
        auto& g = o.parents[0].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bv[i];
      }
      if (o.parents[1].requires_grad()) {
        auto& g = o.parents[1].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * av[i];
      }
    };
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = detail::op_output(a.shape(), {a});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * s;
  if (out.requires_grad()) {
    out.node()->backward_fn = [s](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    };
  }
  return out;
}

// a[m x n] + row[1 x n], broadcast down the rows. Used for bias terms.
inline Tensor add_rowvec(const Tensor& a, const Tensor& row) {
  detail::require_2d(a, "add_rowvec");
  if (row.rank() != 2 || row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: bias shape " + detail::shape_str(row.shape()) +
                                " does not broadcast over " + detail::shape_str(a.shape()));
  }
  Tensor out = detail::op_output(a.shape(), {a, row});
  const int m = a.rows(), n = a.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.value()[static_cast<std::size_t>(i) * n + j] =
          a.value()[static_cast<std::size_t>(i) * n + j] + row.value()[j];
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n](TensorData& o) {
      if (o.parents[0].requires_grad()) {
        auto& g = o.parents[0].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (o.parents[1].requires_grad()) {
        auto& g = o.parents[1].grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) g[j] += o.grad[static_cast<std::size_t>(i) * n + j];
      }
    };
  }
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = detail::op_output({m, n}, {a, b});
  detail::mm_nn(a.value().data(), b.value().data(), out.value().data(), m, k, n);
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, k, n](TensorData& o) {
      Tensor& a2 = o.parents[0];
      Tensor& b2 = o.parents[1];
      if (a2.requires_grad())
        detail::mm_nt(o.grad.data(), b2.value().data(), a2.grad().data(), m, n, k);
      if (b2.requires_grad())
        detail::mm_tn(a2.value().data(), o.grad.data(), b2.grad().data(), m, k, n);
    };
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_2d(a, "transpose");
  const int m = a.rows(), n = a.cols();
  Tensor out = detail::op_output({n, m}, {a});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.value()[static_cast<std::size_t>(j) * m + i] =
          a.value()[static_cast<std::size_t>(i) * n + j];
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          g[static_cast<std::size_t>(i) * n + j] += o.grad[static_cast<std::size_t>(j) * m + i];
    };
  }
  return out;
}

inline Tensor gelu(const Tensor& a) {
  Tensor out = detail::op_output(a.shape(), {a});
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.value()[i];
    out.value()[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorData& o) {
      static const double inv_sqrt_2pi = 0.3989422804014327;
      auto& g = o.parents[0].grad();
      const auto& x = o.parents[0].value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
        g[i] += o.grad[i] * (cdf + x[i] * pdf);
      }
    };
  }
  return out;
}

// Numerically stabilized by max subtraction. axis=1: along each row;
// axis=0: along each column. 1D tensors use axis=0.
inline Tensor softmax(const Tensor& a, int axis = -1);

namespace detail {

inline Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax");
  const int m = a.rows(), n = a.cols();
  if (n == 0) throw std::invalid_argument("softmax: empty axis");
  Tensor out = op_output(a.shape(), {a});
  for (int i = 0; i < m; ++i) {
    const double* xi = a.value().data() + static_cast<std::size_t>(i) * n;
    double* yi = out.value().data() + static_cast<std::size_t>(i) * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    if (!std::isfinite(mx)) throw std::domain_error("softmax: non-finite input");
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      z += yi[j];
    }
    for (int j = 0; j < n; ++j) yi[j] /= z;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (int i = 0; i < m; ++i) {
        const double* y = o.value.data() + static_cast<std::size_t>(i) * n;
        const double* go = o.grad.data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += go[j] * y[j];
        double* gi = g.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gi[j] += y[j] * (go[j] - dot);
      }
    };
  }
  return out;
}

}  // namespace detail

inline Tensor softmax(const Tensor& a, int axis) {
  if (a.rank() == 1) {
    if (axis != 0 && axis != -1)
      throw std::invalid_argument("softmax: invalid axis for 1D tensor");
    // run the row kernel through a reshape pair that keeps the graph connected
    Tensor reshaped = detail::op_output({1, a.shape()[0]}, {a});
    reshaped.value() = a.value();
    if (reshaped.requires_grad()) {
      reshaped.node()->backward_fn = [](TensorData& o) {
        auto& g = o.parents[0].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      };
    }
    Tensor sm = detail::softmax_rows(reshaped);
    Tensor out = detail::op_output({a.shape()[0]}, {sm});
    out.value() = sm.value();
    if (out.requires_grad()) {
      out.node()->backward_fn = [](TensorData& o) {
        auto& g = o.parents[0].grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      };
    }
    return out;
  }
  detail::require_2d(a, "softmax");
  if (axis == -1 || axis == 1) return detail::softmax_rows(a);
  if (axis == 0) return transpose(detail::softmax_rows(transpose(a)));
  throw std::invalid_argument("softmax: invalid axis " + std::to_string(axis));
}

inline Tensor log_softmax_rows(const Tensor& a) {
  detail::require_2d(a, "log_softmax");
  const int m = a.rows(), n = a.cols();
  if (n == 0) throw std::invalid_argument("log_softmax: empty axis");
  Tensor out = detail::op_output(a.shape(), {a});
  for (int i = 0; i < m; ++i) {
    const double* xi = a.value().data() + static_cast<std::size_t>(i) * n;
    double* yi = out.value().data() + static_cast<std::size_t>(i) * n;
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    if (!std::isfinite(mx)) throw std::domain_error("log_softmax: non-finite input");
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(xi[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < n; ++j) yi[j] = xi[j] - lse;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (int i = 0; i < m; ++i) {
        const double* y = o.value.data() + static_cast<std::size_t>(i) * n;
        const double* go = o.grad.data() + static_cast<std::size_t>(i) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += go[j];
        double* gi = g.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gi[j] += go[j] - std::exp(y[j]) * s;
      }
    };
  }
  return out;
}

// Mean negative log-softmax probability of the target ids.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  detail::require_2d(logits, "cross_entropy");
  const int b = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != b) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(b) + " rows");
  }
  for (int i = 0; i < b; ++i) {
    if (targets[i] < 0 || targets[i] >= v) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(targets[i]) +
                              " out of range for vocabulary of " + std::to_string(v));
    }
  }
  Tensor out = detail::op_output({1}, {logits});
  double loss = 0.0;
  std::vector<double> lses(b);
  for (int i = 0; i < b; ++i) {
    const double* xi = logits.value().data() + static_cast<std::size_t>(i) * v;
    double mx = xi[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(xi[j] - mx);
    lses[i] = mx + std::log(z);
    loss += lses[i] - xi[targets[i]];
  }
  out.value()[0] = loss / b;
  if (out.requires_grad()) {
    out.node()->backward_fn = [b, v, targets, lses](TensorData& o) {
      const double go = o.grad[0] / b;
      auto& g = o.parents[0].grad();
      const auto& x = o.parents[0].value();
      for (int i = 0; i < b; ++i) {
        const double* xi = x.data() + static_cast<std::size_t>(i) * v;
        double* gi = g.data() + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) gi[j] += go * std::exp(xi[j] - lses[i]);
        gi[targets[i]] -= go;
      }
    };
  }
  return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  detail::require_2d(x, "layer_norm");
  const int m = x.rows(), n = x.cols();
  if (gain.numel() != static_cast<std::size_t>(n) || bias.numel() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("layer_norm: gain/bias must have width " + std::to_string(n));
  }
  Tensor out = detail::op_output(x.shape(), {x, gain, bias});
  std::vector<double> inv_std(m), means(m);
  for (int i = 0; i < m; ++i) {
    const double* xi = x.value().data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= n;
    means[i] = mu;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    double* yi = out.value().data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j)
      yi[j] = (xi[j] - mu) * inv_std[i] * gain.value()[j] + bias.value()[j];
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n, inv_std, means](TensorData& o) {
      const auto& x2 = o.parents[0].value();
      const auto& gv = o.parents[1].value();
      for (int i = 0; i < m; ++i) {
        const double* xi = x2.data() + static_cast<std::size_t>(i) * n;
        const double* go = o.grad.data() + static_cast<std::size_t>(i) * n;
        // dxhat, plus reductions shared by all inputs of the row
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
          const double xhat = (xi[j] - means[i]) * inv_std[i];
          const double dxhat = go[j] * gv[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        if (o.parents[0].requires_grad()) {
          double* gx = o.parents[0].grad().data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double xhat = (xi[j] - means[i]) * inv_std[i];
            const double dxhat = go[j] * gv[j];
            gx[j] += inv_std[i] * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
          }
        }
        if (o.parents[1].requires_grad()) {
          auto& gg = o.parents[1].grad();
          for (int j = 0; j < n; ++j) {
            const double xhat = (xi[j] - means[i]) * inv_std[i];
            gg[j] += go[j] * xhat;
          }
        }
        if (o.parents[2].requires_grad()) {
          auto& gb = o.parents[2].grad();
          for (int j = 0; j < n; ++j) gb[j] += go[j];
        }
      }
    };
  }
  return out;
}

// Train-only inverted dropout; rate 0 (or eval) is the identity.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng, bool train) {
  if (!train || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  std::vector<double> mask(a.numel());
  for (auto& mv : mask) mv = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = detail::op_output(a.shape(), {a});
  for (std::size_t i = 0; i < mask.size(); ++i) out.value()[i] = a.value()[i] * mask[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [mask](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i];
    };
  }
  return out;
}

// out[i] = x[ids[i]], rows gathered with repetition allowed. Serves as the
// embedding lookup (x = embedding matrix) and as the copy-based decoder
// input builder (x = encoder states).
inline Tensor gather_rows(const Tensor& x, const std::vector<int>& ids) {
  detail::require_2d(x, "gather_rows");
  const int r = x.rows(), d = x.cols();
  const int l = static_cast<int>(ids.size());
  for (int i = 0; i < l; ++i) {
    if (ids[i] < 0 || ids[i] >= r) {
      throw std::out_of_range("gather_rows: index " + std::to_string(ids[i]) +
                              " out of range [0, " + std::to_string(r) + ")");
    }
  }
  Tensor out = detail::op_output({l, d}, {x});
  for (int i = 0; i < l; ++i) {
    const double* src = x.value().data() + static_cast<std::size_t>(ids[i]) * d;
    double* dst = out.value().data() + static_cast<std::size_t>(i) * d;
    std::copy(src, src + d, dst);
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [ids, d](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* go = o.grad.data() + i * d;
        double* gi = g.data() + static_cast<std::size_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) gi[j] += go[j];
      }
    };
  }
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "concat_cols");
  detail::require_2d(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("concat_cols: row mismatch " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  }
  const int m = a.rows(), p = a.cols(), q = b.cols();
  Tensor out = detail::op_output({m, p + q}, {a, b});
  for (int i = 0; i < m; ++i) {
    double* dst = out.value().data() + static_cast<std::size_t>(i) * (p + q);
    const double* ai = a.value().data() + static_cast<std::size_t>(i) * p;
    const double* bi = b.value().data() + static_cast<std::size_t>(i) * q;
    std::copy(ai, ai + p, dst);
    std::copy(bi, bi + q, dst + p);
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, p, q](TensorData& o) {
      for (int i = 0; i < m; ++i) {
        const double* go = o.grad.data() + static_cast<std::size_t>(i) * (p + q);
        if (o.parents[0].requires_grad()) {
          double* ga = o.parents[0].grad().data() + static_cast<std::size_t>(i) * p;
          for (int j = 0; j < p; ++j) ga[j] += go[j];
        }
        if (o.parents[1].requires_grad()) {
          double* gb = o.parents[1].grad().data() + static_cast<std::size_t>(i) * q;
          for (int j = 0; j < q; ++j) gb[j] += go[p + j];
        }
      }
    };
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, int start, int len) {
  detail::require_2d(a, "slice_cols");
  const int m = a.rows(), n = a.cols();
  if (start < 0 || len <= 0 || start + len > n) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") out of width " +
                                std::to_string(n));
  }
  Tensor out = detail::op_output({m, len}, {a});
  for (int i = 0; i < m; ++i) {
    const double* src = a.value().data() + static_cast<std::size_t>(i) * n + start;
    std::copy(src, src + len, out.value().data() + static_cast<std::size_t>(i) * len);
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n, start, len](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (int i = 0; i < m; ++i) {
        const double* go = o.grad.data() + static_cast<std::size_t>(i) * len;
        double* gi = g.data() + static_cast<std::size_t>(i) * n + start;
        for (int j = 0; j < len; ++j) gi[j] += go[j];
      }
    };
  }
  return out;
}

// Element-wise max over the sequence (row) axis: [m x d] -> [1 x d].
// Ties resolve to the earliest row so gradients are deterministic.
inline Tensor maxpool_rows(const Tensor& a) {
  detail::require_2d(a, "maxpool_rows");
  const int m = a.rows(), d = a.cols();
  if (m == 0) throw std::invalid_argument("maxpool_rows: empty input");
  Tensor out = detail::op_output({1, d}, {a});
  std::vector<int> arg(d, 0);
  for (int j = 0; j < d; ++j) {
    double best = a.value()[j];
    for (int i = 1; i < m; ++i) {
      const double v = a.value()[static_cast<std::size_t>(i) * d + j];
      if (v > best) {
        best = v;
        arg[j] = i;
      }
    }
    out.value()[j] = best;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [arg, d](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(arg[j]) * d + j] += o.grad[j];
    };
  }
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  Tensor out = detail::op_output({1}, {a});
  double s = 0.0;
  for (double v : a.value()) s += v;
  out.value()[0] = s;
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (auto& gv : g) gv += o.grad[0];
    };
  }
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// out = a + c where c carries no gradient. Used for additive attention masks.
inline Tensor add_const(const Tensor& a, const std::vector<double>& c) {
  if (c.size() != a.numel()) {
    throw std::invalid_argument("add_const: constant size " + std::to_string(c.size()) +
                                " vs tensor " + detail::shape_str(a.shape()));
  }
  Tensor out = detail::op_output(a.shape(), {a});
  for (std::size_t i = 0; i < c.size(); ++i) out.value()[i] = a.value()[i] + c[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    };
  }
  return out;
}

// Relative-position score spreading: qr[i][.] holds the query-by-offset
// scores for the 2*clip+1 clipped offsets; the output places
// qr[i][clip(j - i) + clip] at (i, j) for every key position j.
inline Tensor relative_gather(const Tensor& qr, int key_len, int clip) {
  detail::require_2d(qr, "relative_gather");
  if (qr.cols() != 2 * clip + 1) {
    throw std::invalid_argument("relative_gather: table width " + std::to_string(qr.cols()) +
                                " does not match clip " + std::to_string(clip));
  }
  const int lq = qr.rows(), w = qr.cols();
  Tensor out = detail::op_output({lq, key_len}, {qr});
  auto col_of = [clip](int i, int j) {
    int off = j - i;
    off = std::max(-clip, std::min(clip, off));
    return off + clip;
  };
  for (int i = 0; i < lq; ++i)
    for (int j = 0; j < key_len; ++j)
      out.value()[static_cast<std::size_t>(i) * key_len + j] =
          qr.value()[static_cast<std::size_t>(i) * w + col_of(i, j)];
  if (out.requires_grad()) {
    out.node()->backward_fn = [lq, key_len, w, col_of](TensorData& o) {
      auto& g = o.parents[0].grad();
      for (int i = 0; i < lq; ++i)
        for (int j = 0; j < key_len; ++j)
          g[static_cast<std::size_t>(i) * w + col_of(i, j)] +=
              o.grad[static_cast<std::size_t>(i) * key_len + j];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward traversal
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<TensorData*> topo_order(const Tensor& root) {
  std::vector<TensorData*> order;
  std::unordered_set<TensorData*> seen;
  // Iterative post-order DFS; parent visit order is the recorded op order,
  // so the traversal (and therefore grad accumulation order) is
  // deterministic for a given graph.
  std::vector<std::pair<TensorData*, std::size_t>> stack;
  if (!seen.insert(root.node()).second) return order;
  stack.emplace_back(root.node(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorData* p = node->parents[next].node();
      ++next;
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

// Reverse-mode sweep from a scalar root. Gradients accumulate; callers that
// re-run backward on the same graph must reset grads first.
inline void backward(const Tensor& root) {
  if (root.numel() != 1) throw std::invalid_argument("backward: root must be a scalar");
  if (!root.requires_grad())
    throw std::logic_error("backward: root does not participate in differentiation");
  auto order = detail::topo_order(root);
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorData* node = *it;
    if (node->backward_fn && node->requires_grad) node->backward_fn(*node);
  }
}

inline void zero_graph_grads(const Tensor& root) {
  for (TensorData* node : detail::topo_order(root)) {
    if (node->requires_grad) std::fill(node->grad.begin(), node->grad.end(), 0.0);
  }
}

}  // namespace narmi
