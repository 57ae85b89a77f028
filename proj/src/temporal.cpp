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

#include "evsign/temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace evsign::temporal {

void TemporalConfig::validate() const {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("model dim must be positive and even");
  if (heads == 0 || dim % heads != 0) throw std::invalid_argument("model dim must be divisible by heads");
  if (window < 1) throw std::invalid_argument("attention window must be at least 1");
  if (gamma != 4) throw std::invalid_argument("token fusion uses two stride-2 poolings, so gamma must be 4");
  if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
  if (ffn_hidden == 0) throw std::invalid_argument("ffn hidden size must be positive");
}

template <typename T>
Tensor<T> sinusoidal_pe_at(std::span<const double> positions, std::size_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("positional encoding dim must be even");
  std::vector<T> out(positions.size() * dim);
  for (std::size_t p = 0; p < positions.size(); ++p)
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle = positions[p] / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      out[p * dim + 2 * i] = static_cast<T>(std::sin(angle));
      out[p * dim + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  return Tensor<T>::from({positions.size(), dim}, std::move(out));
}

template <typename T>
Tensor<T> window_msa(const nn::MultiHeadAttention<T>& attn, const Tensor<T>& tokens, std::size_t window) {
  if (window < 1) throw std::invalid_argument("window size must be at least 1");
  const std::size_t n = tokens.dim(0);
  if (n == 0) throw std::invalid_argument("window_msa needs at least one token");
  if (n <= window) return attn(tokens, tokens, tokens).out;
  std::vector<Tensor<T>> parts;
  for (std::size_t begin = 0; begin < n; begin += window) {
    const auto w = slice(tokens, 0, begin, std::min(n, begin + window));
    parts.push_back(attn(w, w, w).out);
  }
  return concat(parts, 0);
}

std::vector<double> fused_timestamps(std::size_t count, std::size_t gamma) {
  std::vector<double> ts(count);
  for (std::size_t i = 0; i < count; ++i)
    ts[i] = static_cast<double>(i * gamma) + (static_cast<double>(gamma) - 1.0) / 2.0;
  return ts;
}

std::vector<double> visual_timestamps(std::size_t count) {
  std::vector<double> ts(count);
  for (std::size_t j = 0; j < count; ++j) ts[j] = static_cast<double>(j);
  return ts;
}

template <typename T>
Tensor<T> time_prior(std::span<const double> fused_ts, std::span<const double> visual_ts, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
  std::vector<T> out(fused_ts.size() * visual_ts.size());
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t i = 0; i < fused_ts.size(); ++i)
    for (std::size_t j = 0; j < visual_ts.size(); ++j) {
      const double dt = fused_ts[i] - visual_ts[j];
      out[i * visual_ts.size() + j] = static_cast<T>(std::exp(-dt * dt / denom));
    }
  return Tensor<T>::from({fused_ts.size(), visual_ts.size()}, std::move(out));
}

template <typename T>
Tensor<T> token_similarity(const nn::Linear<T>& psi_f, const nn::Linear<T>& psi_v, const Tensor<T>& fused,
                           const Tensor<T>& visual) {
  if (fused.dim(1) != visual.dim(1)) throw TensorError("token_similarity: dim mismatch");
  return matmul(psi_f(fused), transpose(psi_v(visual)));
}

template <typename T>
Tensor<T> build_mask(const Tensor<T>& rho, const Tensor<T>& delta) {
  if (rho.shape() != delta.shape())
    throw TensorError("build_mask: shape mismatch " + shape_str(rho.shape()) + " vs " + shape_str(delta.shape()));
  return mul(row_minmax_normalize(rho), row_minmax_normalize(delta));
}

template <typename T>
nn::AttentionOutput<T> gama(const nn::MultiHeadAttention<T>& attn, const Tensor<T>& query, const Tensor<T>& key,
                            const Tensor<T>& value, const Tensor<T>& mask) {
  nn::AttentionOptions<T> opts;
  opts.score_gate = mask;
  return attn(query, key, value, opts);
}

template <typename T>
TemporalModel<T>::TemporalModel(nn::ParamStore<T>& store, const TemporalConfig& config, nn::Rng& rng)
    : ltf_attn1(store, "temporal.ltf.msa1", (config.validate(), config.dim), config.heads, rng),
      ltf_attn2(store, "temporal.ltf.msa2", config.dim, config.heads, rng),
      psi_f(store, "temporal.gata.psi_f", config.dim, config.dim, rng),
      psi_v(store, "temporal.gata.psi_v", config.dim, config.dim, rng),
      gama_attn(store, "temporal.gata.gama", config.dim, config.heads, rng),
      ffn(store, "temporal.gata.ffn", config.dim, config.ffn_hidden, rng),
      inter_attn(store, "temporal.gata.inter", config.dim, config.heads, rng),
      config_(config) {}

template <typename T>
TokenSeq<T> TemporalModel<T>::local_token_fusion(const Tensor<T>& visual) const {
  const std::size_t p = visual.dim(0), c = visual.dim(1);
  if (p == 0) throw std::invalid_argument("local_token_fusion needs at least one visual token");
  if (c != config_.dim) throw TensorError("local_token_fusion: token dim mismatch");
  Tensor<T> x = visual;
  const std::size_t padded = (p + config_.gamma - 1) / config_.gamma * config_.gamma;
  if (padded != p) x = concat<T>({visual, Tensor<T>::zeros({padded - p, c})}, 0);
  x = max_pool_1d(add(window_msa(ltf_attn1, x, config_.window), x));
  x = max_pool_1d(add(window_msa(ltf_attn2, x, config_.window), x));
  TokenSeq<T> out;
  out.pseudo_ts = fused_timestamps(x.dim(0), config_.gamma);
  out.tokens = x;
  return out;
}

template <typename T>
Tensor<T> TemporalModel<T>::intra_gloss(const TokenSeq<T>& fused, const Tensor<T>& visual, Tensor<T>* mask_out) const {
  const auto vts = visual_timestamps(visual.dim(0));
  const auto delta = time_prior<T>(fused.pseudo_ts, vts, config_.sigma);
  const auto rho = token_similarity(psi_f, psi_v, fused.tokens, visual);
  const auto mask = build_mask(rho, delta);
  if (mask_out) *mask_out = mask;
  const auto q = add(fused.tokens, sinusoidal_pe_at<T>(fused.pseudo_ts, config_.dim));
  const auto k = add(visual, sinusoidal_pe_at<T>(vts, config_.dim));
  const auto hat = add(fused.tokens, gama(gama_attn, q, k, visual, mask).out);
  return add(hat, ffn(hat));
}

template <typename T>
Tensor<T> TemporalModel<T>::inter_gloss(const Tensor<T>& intra, std::span<const double> fused_ts) const {
  const auto x = add(intra, sinusoidal_pe_at<T>(fused_ts, config_.dim));
  return add(intra, inter_attn(x, x, x).out);
}

template <typename T>
GataOutput<T> TemporalModel<T>::forward(const Tensor<T>& visual) const {
  GataOutput<T> out;
  out.fused = local_token_fusion(visual);
  out.intra = intra_gloss(out.fused, visual, &out.mask);
  out.out = inter_gloss(out.intra, out.fused.pseudo_ts);
  return out;
}

#define EVSIGN_INSTANTIATE(T)                                                                                 \
  template Tensor<T> sinusoidal_pe_at<T>(std::span<const double>, std::size_t);                               \
  template Tensor<T> window_msa(const nn::MultiHeadAttention<T>&, const Tensor<T>&, std::size_t);             \
  template Tensor<T> time_prior<T>(std::span<const double>, std::span<const double>, double);                 \
  template Tensor<T> token_similarity(const nn::Linear<T>&, const nn::Linear<T>&, const Tensor<T>&,           \
                                      const Tensor<T>&);                                                      \
  template Tensor<T> build_mask(const Tensor<T>&, const Tensor<T>&);                                          \
  template nn::AttentionOutput<T> gama(const nn::MultiHeadAttention<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                       const Tensor<T>&, const Tensor<T>&);                                   \
  template class TemporalModel<T>;

EVSIGN_INSTANTIATE(float)
EVSIGN_INSTANTIATE(double)

#undef EVSIGN_INSTANTIATE

}  // namespace evsign::temporal
