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

#include "evsign/nn.hpp"

#include <cmath>
#include <numbers>

namespace evsign::nn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, const Shape& shape, Init init, Rng& rng) {
  for (const auto& [n, t] : params_)
    if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
  std::vector<T> values(numel(shape), T(0));
  const std::size_t fan_out = shape.empty() ? 1 : shape.back();
  const std::size_t fan_in = shape.size() < 2 ? 1 : numel(shape) / fan_out;
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), T(1));
      break;
    case Init::kXavier: {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (T& v : values) v = static_cast<T>(rng.uniform(-a, a));
      break;
    }
    case Init::kHe: {
      const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (T& v : values) v = static_cast<T>(s * rng.normal());
      break;
    }
  }
  auto t = Tensor<T>::parameter(shape, std::move(values));
  params_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T> ParamStore<T>::add_buffer(const std::string& name, const Shape& shape, T fill) {
  auto t = Tensor<T>::full(shape, fill);
  buffers_.emplace_back(name, t);
  return t;
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& [n, t] : params_) out.push_back(t);
  return out;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  for (const auto& [n, t] : buffers_)
    if (n == name) return t;
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [n, t] : params_) total += t.size();
  return total;
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                  Init init)
    : weight(store.add(name + ".weight", {in, out}, init, rng)),
      bias(store.add(name + ".bias", {out}, Init::kZeros, rng)) {}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng)
    : gain(store.add(name + ".gain", {dim}, Init::kOnes, rng)),
      bias(store.add(name + ".bias", {dim}, Init::kZeros, rng)) {}

template <typename T>
FeedForward<T>::FeedForward(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden,
                            Rng& rng, bool zero_output)
    : in(store, name + ".fc1", dim, hidden, rng, Init::kHe),
      out(store, name + ".fc2", hidden, dim, rng, zero_output ? Init::kZeros : Init::kXavier) {}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t dim,
                                          std::size_t heads_, Rng& rng, bool zero_output)
    : q(store, name + ".q", dim, dim, rng),
      k(store, name + ".k", dim, dim, rng),
      v(store, name + ".v", dim, dim, rng),
      o(store, name + ".o", dim, dim, rng, zero_output ? Init::kZeros : Init::kXavier),
      heads(heads_) {
  if (heads == 0 || dim % heads != 0)
    throw std::invalid_argument("model dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                                " heads");
}

template <typename T>
AttentionOutput<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query, const Tensor<T>& key,
                                                     const Tensor<T>& value,
                                                     const AttentionOptions<T>& options) const {
  auto res = attend(q(query), k(key), v(value), heads, options);
  res.out = o(res.out);
  return res;
}

template <typename T>
AttentionOutput<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                          const AttentionOptions<T>& options) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw TensorError("attend: expected 2-D q/k/v");
  const std::size_t lq = q.dim(0), lk = k.dim(0), dim = q.dim(1);
  if (k.dim(1) != dim || v.dim(1) != dim || v.dim(0) != lk) throw TensorError("attend: q/k/v shape mismatch");
  if (heads == 0 || dim % heads != 0) throw TensorError("attend: dim not divisible by heads");
  if (options.score_gate && options.score_gate->shape() != Shape{lq, lk})
    throw TensorError("attend: gate shape " + shape_str(options.score_gate->shape()) + " != " +
                      shape_str(Shape{lq, lk}));
  const std::size_t d = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  std::vector<bool> future;
  if (options.causal) {
    future.assign(lq * lk, false);
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = i + 1; j < lk; ++j) future[i * lk + j] = true;
  }
  AttentionOutput<T> res;
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = heads == 1 ? q : slice(q, 1, h * d, (h + 1) * d);
    const auto kh = heads == 1 ? k : slice(k, 1, h * d, (h + 1) * d);
    const auto vh = heads == 1 ? v : slice(v, 1, h * d, (h + 1) * d);
    auto scores = scalar_mul(matmul(qh, transpose(kh)), scale);
    if (options.score_gate) scores = mul(scores, *options.score_gate);
    if (options.causal) scores = masked_fill(scores, future, T(-1e9));
    auto w = softmax(scores, 1);
    outs.push_back(matmul(w, vh));
    res.weights.push_back(w);
  }
  res.out = heads == 1 ? outs[0] : concat(outs, 1);
  return res;
}

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t n, std::size_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("positional encoding dim must be even");
  std::vector<T> out(n * dim);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      out[pos * dim + 2 * i] = static_cast<T>(std::sin(angle));
      out[pos * dim + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  return Tensor<T>::from({n, dim}, std::move(out));
}

#define EVSIGN_INSTANTIATE(T)                                                                       \
  template class ParamStore<T>;                                                                     \
  template struct Linear<T>;                                                                        \
  template struct LayerNorm<T>;                                                                     \
  template struct FeedForward<T>;                                                                   \
  template struct MultiHeadAttention<T>;                                                            \
  template AttentionOutput<T> attend(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                     std::size_t, const AttentionOptions<T>&);                      \
  template Tensor<T> sinusoidal_pe<T>(std::size_t, std::size_t);

EVSIGN_INSTANTIATE(float)
EVSIGN_INSTANTIATE(double)

#undef EVSIGN_INSTANTIATE

}  // namespace evsign::nn
