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

#include "evsign/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace evsign {

namespace {

thread_local bool tls_grad_enabled = true;
std::atomic<bool> g_checked_mode{false};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

[[noreturn]] void fail(const std::string& what) { throw TensorError(what); }

// Splits a shape around one axis into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) fail("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool is_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
void check_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape()) || (b.size() == 0 && a.size() != 0))
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank)
    fail(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

template <typename T>
void check_finite(const char* op, const std::vector<T>& values) {
  for (T v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return tls_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(tls_grad_enabled) { tls_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tls_grad_enabled = previous_; }

void set_checked_mode(bool on) { g_checked_mode.store(on); }
bool checked_mode() { return g_checked_mode.load(); }

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor() : node_(std::make_shared<Node<T>>()) {
  node_->data.assign(1, T(0));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
  return full(shape, T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
  return from(shape, std::vector<T>(numel(shape), value));
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values) {
  if (values.size() != numel(shape))
    fail("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data = std::move(values);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from({}, {value});
}

template <typename T>
Tensor<T> Tensor<T>::parameter(const Shape& shape, std::vector<T> values) {
  Tensor t = from(shape, std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::make(const char* op, Shape shape, std::vector<T> values,
                          const std::vector<Tensor>& parents, BackwardFn<T> backward) {
  if (values.size() != numel(shape)) fail(std::string(op) + ": internal size mismatch");
  if (checked_mode()) check_finite(op, values);
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(values);
  bool needs = false;
  if (tls_grad_enabled)
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  if (i >= rank()) fail("dim " + std::to_string(i) + " out of range for " + shape_str(shape()));
  return node_->shape[i];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) fail("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::assign(std::span<const T> values) const {
  if (!is_leaf()) fail("assign on a non-leaf tensor");
  if (values.size() != size()) fail("assign: size mismatch");
  std::copy(values.begin(), values.end(), node_->data.begin());
}

template <typename T>
void Tensor<T>::set(std::size_t flat_index, T value) const {
  if (!is_leaf()) fail("set on a non-leaf tensor");
  node_->data.at(flat_index) = value;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->data);
}

// ---------------------------------------------------------------------------
// Gradients and backward

template <typename T>
std::span<const T> Gradients<T>::of(const Tensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return {};
  return it->second;
}

template <typename T>
void Gradients<T>::merge(const Gradients& other) {
  for (const auto& [key, g] : other.grads_) {
    auto& mine = grads_[key];
    if (mine.empty()) {
      mine = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
    }
  }
}

template <typename T>
void Gradients<T>::scale(T factor) {
  for (auto& [key, g] : grads_)
    for (T& v : g) v *= factor;
}

template <typename T>
void Gradients<T>::put(const Node<T>* node, std::vector<T> grad) {
  grads_[node] = std::move(grad);
}

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
  if (loss.size() != 1) fail("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Gradients<T> result;
  if (!loss.requires_grad()) return result;

  // Iterative post-order DFS gives a deterministic topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<const Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node<T>*, std::vector<T>> grads;
  grads[loss.node().get()] = {T(1)};
  std::vector<std::span<T>> spans;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->is_leaf()) continue;
    std::vector<T> grad_out = std::move(found->second);
    grads.erase(found);
    spans.assign(node->parents.size(), {});
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      Node<T>* p = node->parents[i].get();
      if (!p->requires_grad) continue;
      auto& buf = grads[p];
      if (buf.empty()) buf.assign(p->data.size(), T(0));
      spans[i] = std::span<T>(buf);
    }
    node->backward(*node, grad_out, spans);
  }
  for (auto& [node, g] : grads)
    if (node->is_leaf()) result.put(node, std::move(g));
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_broadcast(a, b, "add");
  const std::size_t n = a.size(), m = b.size();
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] += bd[i % m];
  return Tensor<T>::make("add", a.shape(), std::move(out), {a, b},
                         [n, m](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           if (!pg[0].empty())
                             for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[i];
                           if (!pg[1].empty())
                             for (std::size_t i = 0; i < n; ++i) pg[1][i % m] += g[i];
                         });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_broadcast(a, b, "sub");
  const std::size_t n = a.size(), m = b.size();
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] -= bd[i % m];
  return Tensor<T>::make("sub", a.shape(), std::move(out), {a, b},
                         [n, m](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           if (!pg[0].empty())
                             for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[i];
                           if (!pg[1].empty())
                             for (std::size_t i = 0; i < n; ++i) pg[1][i % m] -= g[i];
                         });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_broadcast(a, b, "mul");
  const std::size_t n = a.size(), m = b.size();
  std::vector<T> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = ad[i] * bd[i % m];
  return Tensor<T>::make("mul", a.shape(), std::move(out), {a, b},
                         [n, m](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           const auto& x = self.parents[0]->data;
                           const auto& y = self.parents[1]->data;
                           if (!pg[0].empty())
                             for (std::size_t i = 0; i < n; ++i) pg[0][i] += g[i] * y[i % m];
                           if (!pg[1].empty())
                             for (std::size_t i = 0; i < n; ++i) pg[1][i % m] += g[i] * x[i];
                         });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= s;
  return Tensor<T>::make("scalar_mul", a.shape(), std::move(out), {a},
                         [s](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += s * g[i];
                         });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  return Tensor<T>::make("relu", a.shape(), std::move(out), {a},
                         [](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           const auto& x = self.parents[0]->data;
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (x[i] > T(0)) pg[0][i] += g[i];
                         });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = std::exp(v);
  return Tensor<T>::make("exp", a.shape(), std::move(out), {a},
                         [](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * self.data[i];
                         });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = std::log(v);
  return Tensor<T>::make("log", a.shape(), std::move(out), {a},
                         [](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           const auto& x = self.parents[0]->data;
                           for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] / x[i];
                         });
}

template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, const std::vector<bool>& mask, T value) {
  if (mask.size() != a.size()) fail("masked_fill: mask size mismatch");
  std::vector<T> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  return Tensor<T>::make("masked_fill", a.shape(), std::move(out), {a},
                         [mask](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (!mask[i]) pg[0][i] += g[i];
                         });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return Tensor<T>::make("sum", {}, {total}, {a},
                         [](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (T& v : pg[0]) v += g[0];
                         });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) fail("mean of empty tensor");
  T total = T(0);
  for (T v : a.data()) total += v;
  const T inv = T(1) / static_cast<T>(a.size());
  return Tensor<T>::make("mean", {}, {total * inv}, {a},
                         [inv](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (T& v : pg[0]) v += g[0] * inv;
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  if (b.dim(0) != a.dim(1))
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  MutMap<T>(out.data(), m, n).noalias() =
      ConstMap<T>(a.data().data(), m, k) * ConstMap<T>(b.data().data(), k, n);
  return Tensor<T>::make(
      "matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b},
      [m, k, n](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
        ConstMap<T> G(g.data(), m, n);
        if (!pg[0].empty())
          MutMap<T>(pg[0].data(), m, k).noalias() +=
              G * ConstMap<T>(self.parents[1]->data.data(), k, n).transpose();
        if (!pg[1].empty())
          MutMap<T>(pg[1].data(), k, n).noalias() +=
              ConstMap<T>(self.parents[0]->data.data(), m, k).transpose() * G;
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  auto d = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return Tensor<T>::make("transpose", {c, r}, std::move(out), {a},
                         [r, c](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) pg[0][i * c + j] += g[j * r + i];
                         });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (numel(shape) != a.size())
    fail("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make("reshape", shape, std::move(out), {a},
                         [](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                         });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) fail("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) fail("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) fail("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && p.shape()[i] != first[i])
        fail("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
    extents.push_back(p.shape()[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    const std::size_t block = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(d.begin() + o * block, block, out.begin() + o * s.extent * s.inner + offset);
    offset += block;
  }
  return Tensor<T>::make("concat", out_shape, std::move(out), parts,
                         [s, extents](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           std::size_t off = 0;
                           for (std::size_t k = 0; k < extents.size(); ++k) {
                             const std::size_t block = extents[k] * s.inner;
                             if (!pg[k].empty())
                               for (std::size_t o = 0; o < s.outer; ++o)
                                 for (std::size_t i = 0; i < block; ++i)
                                   pg[k][o * block + i] += g[o * s.extent * s.inner + off + i];
                             off += block;
                           }
                         });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (begin > end || end > s.extent)
    fail("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of bounds for " +
         shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * s.inner;
  std::vector<T> out(s.outer * block);
  auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(d.begin() + (o * s.extent + begin) * s.inner, block, out.begin() + o * block);
  return Tensor<T>::make("slice", out_shape, std::move(out), {a},
                         [s, begin, block](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t i = 0; i < block; ++i)
                               pg[0][(o * s.extent + begin) * s.inner + i] += g[o * block + i];
                         });
}

// ---------------------------------------------------------------------------
// Normalizations

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.extent == 0) fail("softmax over empty axis");
  std::vector<T> out(a.size());
  auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, d[base + k * s.inner]);
      T total = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T e = std::exp(d[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  return Tensor<T>::make("softmax", a.shape(), std::move(out), {a},
                         [s](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           const auto& y = self.data;
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t in = 0; in < s.inner; ++in) {
                               const std::size_t base = o * s.extent * s.inner + in;
                               T dot = T(0);
                               for (std::size_t k = 0; k < s.extent; ++k)
                                 dot += g[base + k * s.inner] * y[base + k * s.inner];
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                 const std::size_t i = base + k * s.inner;
                                 pg[0][i] += y[i] * (g[i] - dot);
                               }
                             }
                         });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.extent == 0) fail("log_softmax over empty axis");
  std::vector<T> out(a.size());
  auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, d[base + k * s.inner]);
      T total = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) total += std::exp(d[base + k * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = d[base + k * s.inner] - lse;
    }
  return Tensor<T>::make("log_softmax", a.shape(), std::move(out), {a},
                         [s](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           const auto& y = self.data;
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t in = 0; in < s.inner; ++in) {
                               const std::size_t base = o * s.extent * s.inner + in;
                               T total = T(0);
                               for (std::size_t k = 0; k < s.extent; ++k) total += g[base + k * s.inner];
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                 const std::size_t i = base + k * s.inner;
                                 pg[0][i] += g[i] - std::exp(y[i]) * total;
                               }
                             }
                         });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::size_t axis, T eps) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (s.extent == 0) fail("layer_norm over empty axis");
  if (gain.size() != s.extent || bias.size() != s.extent) fail("layer_norm: gain/bias size mismatch");
  std::vector<T> out(a.size());
  std::vector<T> xhat(a.size());
  std::vector<T> inv_std(s.outer * s.inner);
  auto d = a.data();
  auto gd = gain.data();
  auto bd = bias.data();
  const T n = static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mu = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) mu += d[base + k * s.inner];
      mu /= n;
      T var = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T c = d[base + k * s.inner] - mu;
        var += c * c;
      }
      var /= n;
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[o * s.inner + in] = is;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const std::size_t i = base + k * s.inner;
        xhat[i] = (d[i] - mu) * is;
        out[i] = xhat[i] * gd[k] + bd[k];
      }
    }
  return Tensor<T>::make(
      "layer_norm", a.shape(), std::move(out), {a, gain, bias},
      [s, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
        const auto& gd = self.parents[1]->data;
        const T n = static_cast<T>(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            T sum_d = T(0), sum_dx = T(0);
            for (std::size_t k = 0; k < s.extent; ++k) {
              const std::size_t i = base + k * s.inner;
              const T dxh = g[i] * gd[k];
              sum_d += dxh;
              sum_dx += dxh * xhat[i];
              if (!pg[1].empty()) pg[1][k] += g[i] * xhat[i];
              if (!pg[2].empty()) pg[2][k] += g[i];
            }
            if (pg[0].empty()) continue;
            const T is = inv_std[o * s.inner + in];
            for (std::size_t k = 0; k < s.extent; ++k) {
              const std::size_t i = base + k * s.inner;
              const T dxh = g[i] * gd[k];
              pg[0][i] += is / n * (n * dxh - sum_d - xhat[i] * sum_dx);
            }
          }
      });
}

template <typename T>
Tensor<T> row_minmax_normalize(const Tensor<T>& a) {
  require_rank(a, 2, "row_minmax_normalize");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(a.size(), T(1));
  std::vector<std::size_t> arg_min(rows, 0), arg_max(rows, 0);
  std::vector<T> range(rows, T(0));
  auto d = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = d.data() + r * cols;
    std::size_t lo = 0, hi = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (row[c] < row[lo]) lo = c;
      if (row[c] > row[hi]) hi = c;
    }
    arg_min[r] = lo;
    arg_max[r] = hi;
    if (cols == 0 || !(row[hi] > row[lo])) continue;
    range[r] = row[hi] - row[lo];
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (row[c] - row[lo]) / range[r];
  }
  return Tensor<T>::make(
      "row_minmax_normalize", a.shape(), std::move(out), {a},
      [rows, cols, arg_min = std::move(arg_min), arg_max = std::move(arg_max),
       range = std::move(range)](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
        const auto& y = self.data;
        for (std::size_t r = 0; r < rows; ++r) {
          if (range[r] == T(0)) continue;
          const T inv = T(1) / range[r];
          T to_min = T(0), to_max = T(0);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            pg[0][i] += g[i] * inv;
            to_min += g[i] * (y[i] - T(1)) * inv;
            to_max -= g[i] * y[i] * inv;
          }
          pg[0][r * cols + arg_min[r]] += to_min;
          pg[0][r * cols + arg_max[r]] += to_max;
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing and pooling

template <typename T>
Tensor<T> max_pool_1d(const Tensor<T>& a) {
  require_rank(a, 2, "max_pool_1d");
  const std::size_t n = a.dim(0), c = a.dim(1), m = n / 2;
  std::vector<T> out(m * c);
  std::vector<std::size_t> src(m * c);
  auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i0 = (2 * i) * c + j, i1 = (2 * i + 1) * c + j;
      const std::size_t pick = d[i1] > d[i0] ? i1 : i0;
      out[i * c + j] = d[pick];
      src[i * c + j] = pick;
    }
  return Tensor<T>::make("max_pool_1d", {m, c}, std::move(out), {a},
                         [src = std::move(src)](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < g.size(); ++i) pg[0][src[i]] += g[i];
                         });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int64_t> ids) {
  require_rank(table, 2, "embedding_lookup");
  const std::size_t v = table.dim(0), c = table.dim(1);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (std::int64_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      fail("embedding_lookup: id " + std::to_string(id) + " outside table of " + std::to_string(v));
    rows.push_back(static_cast<std::size_t>(id));
  }
  std::vector<T> out(rows.size() * c);
  auto d = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(d.begin() + rows[i] * c, c, out.begin() + i * c);
  return Tensor<T>::make("embedding_lookup", {rows.size(), c}, std::move(out), {table},
                         [rows, c](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t i = 0; i < rows.size(); ++i)
                             for (std::size_t j = 0; j < c; ++j) pg[0][rows[i] * c + j] += g[i * c + j];
                         });
}

template <typename T>
Tensor<T> gather_2d(const Tensor<T>& a, std::span<const std::size_t> rows,
                    std::span<const std::size_t> cols) {
  require_rank(a, 2, "gather_2d");
  if (rows.size() != cols.size()) fail("gather_2d: index length mismatch");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= r || cols[k] >= c) fail("gather_2d: index out of range");
    flat[k] = rows[k] * c + cols[k];
  }
  std::vector<T> out(flat.size());
  auto d = a.data();
  for (std::size_t k = 0; k < flat.size(); ++k) out[k] = d[flat[k]];
  const std::size_t n = flat.size();
  return Tensor<T>::make("gather_2d", {n}, std::move(out), {a},
                         [flat = std::move(flat)](const Node<T>&, std::span<const T> g, std::vector<std::span<T>>& pg) {
                           for (std::size_t k = 0; k < flat.size(); ++k) pg[0][flat[k]] += g[k];
                         });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Finite differences

double fd_derivative(const std::function<double(double)>& f, double x0, const FdOptions& options) {
  if (!(options.eps > 0)) fail("finite_diff_check: eps must be positive");
  const double h = options.eps;
  auto at = [&](double x) {
    const double v = f(x);
    if (!std::isfinite(v)) fail("finite_diff_check: f is not finite at a perturbed point");
    return v;
  };
  return (at(x0 + h) - at(x0 - h)) / (2 * h);
}

FdReport fd_score(std::span<const double> analytic, std::span<const double> numeric, const FdOptions& options) {
  if (analytic.size() != numeric.size()) fail("fd_score: length mismatch");
  FdReport report;
  double scale = 0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  const double floor = std::max(options.floor, options.scale_floor * scale);
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double a = analytic[k], n = numeric[k];
    const double abs_err = std::abs(a - n);
    const double rel = abs_err / std::max({std::abs(a), std::abs(n), floor});
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    if (rel >= report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_analytic = a;
      report.worst_numeric = n;
    }
    report.max_abs_grad = std::max(report.max_abs_grad, std::abs(a));
    ++report.coords_checked;
  }
  return report;
}

std::vector<std::size_t> fd_coords(std::size_t n, const FdOptions& options) {
  std::size_t stride = 1;
  if (options.max_coords_per_param > 0 && n > options.max_coords_per_param)
    stride = (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; i += stride) out.push_back(i);
  return out;
}

template <typename T>
FdReport finite_diff_check(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& params,
                           const FdOptions& options) {
  const Tensor<T> loss = f();
  if (!std::isfinite(static_cast<double>(loss.item()))) fail("finite_diff_check: f is not finite");
  const Gradients<T> grads = backward(loss);
  std::vector<double> analytic, numeric;
  for (const auto& p : params) {
    if (!p.is_leaf()) fail("finite_diff_check: parameters must be leaves");
    const auto g = grads.of(p);
    for (const std::size_t i : fd_coords(p.size(), options)) {
      const T original = p.at(i);
      {
        NoGradGuard guard;
        numeric.push_back(fd_derivative(
            [&](double x) {
              p.set(i, static_cast<T>(x));
              return static_cast<double>(f().item());
            },
            static_cast<double>(original), options));
        p.set(i, original);
      }
      analytic.push_back(g.empty() ? 0.0 : static_cast<double>(g[i]));
    }
  }
  return fd_score(analytic, numeric, options);
}

// ---------------------------------------------------------------------------

#define EVSIGN_INSTANTIATE(T)                                                                    \
  template class Tensor<T>;                                                                      \
  template class Gradients<T>;                                                                   \
  template Gradients<T> backward(const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scalar_mul(const Tensor<T>&, T);                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> transpose(const Tensor<T>&);                                                \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                    \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);             \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> exp(const Tensor<T>&);                                                      \
  template Tensor<T> log(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> max_pool_1d(const Tensor<T>&);                                              \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int64_t>);          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                std::size_t, T);                                                 \
  template Tensor<T> masked_fill(const Tensor<T>&, const std::vector<bool>&, T);                 \
  template Tensor<T> gather_2d(const Tensor<T>&, std::span<const std::size_t>,                   \
                               std::span<const std::size_t>);                                    \
  template Tensor<T> row_minmax_normalize(const Tensor<T>&);                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template FdReport finite_diff_check(const std::function<Tensor<T>()>&,                         \
                                      const std::vector<Tensor<T>>&, const FdOptions&);

EVSIGN_INSTANTIATE(float)
EVSIGN_INSTANTIATE(double)

#undef EVSIGN_INSTANTIATE

}  // namespace evsign
