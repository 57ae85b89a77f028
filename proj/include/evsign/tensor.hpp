// Copyright 2026 The EvSign Authors.
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

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is an immutable value that owns a shared graph node. Ops record
// their parents and a vector-Jacobian product when at least one input requires
// a gradient and grad mode is enabled on the calling thread. backward() walks
// the graph in reverse topological order and returns the gradients of every
// requires_grad leaf as a separate map, so one set of parameter leaves can be
// shared by graphs built concurrently on different threads.
//
// Everything is templated on the scalar type. float is the training type;
// double exists for gradient checks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace evsign {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised in checked mode when an op produces NaN or Inf.
class NumericError : public TensorError {
 public:
  using TensorError::TensorError;
};

// Grad recording is on by default; NoGradGuard turns it off for the current
// thread until the guard goes out of scope.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Checked mode verifies that every op output is finite and throws TensorError
// otherwise. Process-wide; off by default.
void set_checked_mode(bool on);
bool checked_mode();

template <typename T>
struct Node;

// parent_grads[i] is empty when parent i does not need a gradient.
template <typename T>
using BackwardFn = std::function<void(const Node<T>& self, std::span<const T> grad_out,
                                      std::vector<std::span<T>>& parent_grads)>;

template <typename T>
struct Node {
  const char* op = "leaf";
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn<T> backward;

  bool is_leaf() const { return parents.empty(); }
};

template <typename T>
class Tensor {
 public:
  Tensor();

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, T value);
  static Tensor from(const Shape& shape, std::vector<T> values);
  static Tensor scalar(T value);
  // A leaf that requires a gradient.
  static Tensor parameter(const Shape& shape, std::vector<T> values);

  // Builds an op result. Parents that do not require a gradient are dropped
  // from the recorded graph; if none remain, the result is a constant.
  static Tensor make(const char* op, Shape shape, std::vector<T> values,
                     const std::vector<Tensor>& parents, BackwardFn<T> backward);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const { return node_->data.size(); }
  std::span<const T> data() const { return node_->data; }
  T item() const;
  T at(std::size_t flat_index) const { return node_->data.at(flat_index); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }

  // Overwrites a leaf's values in place (optimizer updates, checkpoint load,
  // finite-difference probing). Throws for non-leaf tensors.
  void assign(std::span<const T> values) const;
  void set(std::size_t flat_index, T value) const;

  // A constant copy with no graph history.
  Tensor detach() const;

  const Node<T>* id() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

// Gradients of requires_grad leaves, keyed by node identity.
template <typename T>
class Gradients {
 public:
  std::span<const T> of(const Tensor<T>& t) const;
  bool has(const Tensor<T>& t) const { return grads_.count(t.id()) != 0; }
  std::size_t count() const { return grads_.size(); }

  // Element-wise sum into this map. Missing keys are added.
  void merge(const Gradients& other);
  void scale(T factor);
  void put(const Node<T>* node, std::vector<T> grad);

 private:
  std::unordered_map<const Node<T>*, std::vector<T>> grads_;
};

// Reverse-mode sweep from a scalar loss. Throws if the loss is not scalar.
template <typename T>
Gradients<T> backward(const Tensor<T>& loss);

// ---------------------------------------------------------------------------
// Op catalog. Binary elementwise ops accept equal shapes or a right operand
// whose shape is a suffix of the left operand's shape (bias broadcasting).

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scalar_mul(const Tensor<T>& a, T s);
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin,
                                      std::size_t end);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
// Pools rows of an n x C matrix pairwise (kernel 2, stride 2) per column.
// An odd trailing row is dropped.
template <typename T> Tensor<T> max_pool_1d(const Tensor<T>& a);
template <typename T> Tensor<T> embedding_lookup(const Tensor<T>& table,
                                                 std::span<const std::int64_t> ids);
template <typename T> Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain,
                                           const Tensor<T>& bias, std::size_t axis,
                                           T eps = T(1e-5));
// out[i] = mask[i] ? value : a[i]
template <typename T> Tensor<T> masked_fill(const Tensor<T>& a, const std::vector<bool>& mask,
                                            T value);
// out[k] = a[rows[k], cols[k]] for a 2-D tensor.
template <typename T> Tensor<T> gather_2d(const Tensor<T>& a, std::span<const std::size_t> rows,
                                          std::span<const std::size_t> cols);
// Per-row min-max normalization of a 2-D tensor to [0, 1]; a constant row maps
// to all ones and passes no gradient.
template <typename T> Tensor<T> row_minmax_normalize(const Tensor<T>& a);

// x W + b for x: n x in, W: in x out, b: out.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle.

struct FdOptions {
  double eps = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-8;
  // Per-parameter cap on probed coordinates (0 = all). Probed coordinates are
  // chosen with a fixed stride so the check stays deterministic.
  std::size_t max_coords_per_param = 0;
  // If positive, the floor is raised to scale_floor times the largest
  // numeric gradient magnitude over all probed coordinates.
  double scale_floor = 0.0;
};

struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coords_checked = 0;
  // Analytic and numeric values at the coordinate with the worst relative error.
  double worst_analytic = 0.0, worst_numeric = 0.0;
  // Largest analytic magnitude over the probed coordinates.
  double max_abs_grad = 0.0;
};

// Central-difference derivative of f at x0.
double fd_derivative(const std::function<double(double)>& f, double x0, const FdOptions& options);
// Scores probed coordinates, pooled over all parameters of one check.
FdReport fd_score(std::span<const double> analytic, std::span<const double> numeric, const FdOptions& options);
// Coordinates probed in a tensor of n elements.
std::vector<std::size_t> fd_coords(std::size_t n, const FdOptions& options);

// Compares backward() of f against central differences of f over every
// probed coordinate of params. f must rebuild its graph from the current
// values of params on each call. Throws TensorError on a non-finite f.
template <typename T>
FdReport finite_diff_check(const std::function<Tensor<T>()>& f,
                           const std::vector<Tensor<T>>& params, const FdOptions& options = {});

}  // namespace evsign
