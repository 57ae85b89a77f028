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

// Trainable building blocks shared by the backbone, temporal model and heads.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "evsign/tensor.hpp"

namespace evsign::nn {

// Portable seeded generator. Distributions are derived from raw 64-bit draws
// so values do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Stable 64-bit mixing of a seed with a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

enum class Init { kZeros, kOnes, kXavier, kHe };

// Ordered, named parameter (and buffer) registry.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, const Shape& shape, Init init, Rng& rng);
  // Non-trainable state such as running statistics; stored and checkpointed
  // alongside parameters but never updated by the optimizer.
  Tensor<T> add_buffer(const std::string& name, const Shape& shape, T fill);

  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& buffers() const { return buffers_; }
  std::vector<Tensor<T>> tensors() const;
  const Tensor<T>& get(const std::string& name) const;
  std::size_t parameter_count() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::pair<std::string, Tensor<T>>> buffers_;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // out

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         Init init = Init::kXavier);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias, x.rank() - 1); }
};

// linear -> ReLU -> linear
template <typename T>
struct FeedForward {
  Linear<T> in;
  Linear<T> out;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng,
              bool zero_output = false);
  Tensor<T> operator()(const Tensor<T>& x) const { return out(relu(in(x))); }
};

template <typename T>
struct AttentionOptions {
  // Multiplies the scaled scores of every head before the softmax (L x P).
  std::optional<Tensor<T>> score_gate;
  // Query u may only attend to keys <= u.
  bool causal = false;
};

template <typename T>
struct AttentionOutput {
  Tensor<T> out;                   // L x C
  std::vector<Tensor<T>> weights;  // per head, L x P, rows sum to 1
};

// Multi-head scaled dot-product attention with separate query/key/value
// inputs and an output projection.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads, Rng& rng,
                     bool zero_output = false);

  AttentionOutput<T> operator()(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                                const AttentionOptions<T>& options = {}) const;
};

// Projected inputs version used by tests and by callers that build Q/K/V
// themselves: softmax(QK^T/sqrt(d) (*) gate) V per head, heads concatenated.
template <typename T>
AttentionOutput<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                          const AttentionOptions<T>& options = {});

// PE[pos, 2i] = sin(pos / 10000^(2i/C)), PE[pos, 2i+1] = cos(...). C even.
template <typename T>
Tensor<T> sinusoidal_pe(std::size_t n, std::size_t dim);

}  // namespace evsign::nn
