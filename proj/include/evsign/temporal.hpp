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

// Visual tokens (one per segment) -> fused tokens -> gloss-aware tokens.
//
//   local_token_fusion:  two rounds of windowed self-attention + residual,
//                        each followed by pairwise temporal max pooling.
//   intra-gloss block:   cross-attention from fused to visual tokens whose
//                        scores are gated by M = N(rho) * N(delta), then FFN.
//   inter-gloss block:   global self-attention over the fused tokens.

#include <span>
#include <vector>

#include "evsign/nn.hpp"
#include "evsign/tensor.hpp"

namespace evsign::temporal {

using nn::sinusoidal_pe;

// Sinusoidal encoding evaluated at real-valued positions.
template <typename T>
Tensor<T> sinusoidal_pe_at(std::span<const double> positions, std::size_t dim);

struct TemporalConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t window = 8;  // I
  std::size_t gamma = 4;   // two pooling rounds of stride 2
  double sigma = 16.0;
  std::size_t ffn_hidden = 256;

  void validate() const;
};

template <typename T>
struct TokenSeq {
  Tensor<T> tokens;                // n x C
  std::vector<double> pseudo_ts;   // n, strictly increasing
};

// Non-overlapping windows of `window` tokens; the last may be shorter.
// Attention never crosses a window boundary.
template <typename T>
Tensor<T> window_msa(const nn::MultiHeadAttention<T>& attn, const Tensor<T>& tokens, std::size_t window);

// t_i = i * gamma + (gamma - 1) / 2
std::vector<double> fused_timestamps(std::size_t count, std::size_t gamma);
std::vector<double> visual_timestamps(std::size_t count);

// delta_ij = exp(-(tf_i - tv_j)^2 / (2 sigma^2))
template <typename T>
Tensor<T> time_prior(std::span<const double> fused_ts, std::span<const double> visual_ts, double sigma);

// rho = psi_f(fused) psi_v(visual)^T
template <typename T>
Tensor<T> token_similarity(const nn::Linear<T>& psi_f, const nn::Linear<T>& psi_v, const Tensor<T>& fused,
                           const Tensor<T>& visual);

// M = N(rho) (*) N(delta) with N the per-row min-max normalization.
template <typename T>
Tensor<T> build_mask(const Tensor<T>& rho, const Tensor<T>& delta);

// softmax(Q K^T / sqrt(d) (*) M) V per head (all heads share M), then the
// output projection. Gated-out scores enter the softmax as 0.
template <typename T>
nn::AttentionOutput<T> gama(const nn::MultiHeadAttention<T>& attn, const Tensor<T>& query, const Tensor<T>& key,
                            const Tensor<T>& value, const Tensor<T>& mask);

template <typename T>
struct GataOutput {
  TokenSeq<T> fused;   // O^f
  Tensor<T> intra;     // after the intra-gloss block
  Tensor<T> out;       // O
  Tensor<T> mask;      // M, L x P
};

template <typename T>
class TemporalModel {
 public:
  TemporalModel(nn::ParamStore<T>& store, const TemporalConfig& config, nn::Rng& rng);

  // visual: P x C. Pads with zero tokens up to a multiple of gamma.
  TokenSeq<T> local_token_fusion(const Tensor<T>& visual) const;
  Tensor<T> intra_gloss(const TokenSeq<T>& fused, const Tensor<T>& visual, Tensor<T>* mask_out = nullptr) const;
  Tensor<T> inter_gloss(const Tensor<T>& intra, std::span<const double> fused_ts) const;
  GataOutput<T> forward(const Tensor<T>& visual) const;

  const TemporalConfig& config() const { return config_; }

  // Exposed for tests that need to zero or inspect individual projections.
  nn::MultiHeadAttention<T> ltf_attn1, ltf_attn2;
  nn::Linear<T> psi_f, psi_v;
  nn::MultiHeadAttention<T> gama_attn;
  nn::FeedForward<T> ffn;
  nn::MultiHeadAttention<T> inter_attn;

 private:
  TemporalConfig config_;
};

}  // namespace evsign::temporal
