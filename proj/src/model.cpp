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

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "evsign/pipeline.hpp"

namespace evsign::pipeline {

namespace {

constexpr std::uint64_t kInitStream = 10;

sparse::BackboneConfig backbone_config(const ModelConfig& m) {
  sparse::BackboneConfig b;
  b.in_channels = m.bins;
  b.channels = m.backbone_channels;
  b.site_threshold = static_cast<float>(m.site_threshold);
  b.norm_momentum = m.norm_momentum;
  return b;
}

temporal::TemporalConfig temporal_config(const ModelConfig& m) {
  return {m.dim, m.heads, m.window, m.gamma, m.sigma, m.ffn_hidden};
}

}  // namespace

std::size_t default_threads() {
  if (const char* env = std::getenv("EVSIGN_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::size_t gloss_classes, std::size_t word_vocab, std::uint64_t seed)
    : config_(config),
      gloss_classes_(gloss_classes),
      word_vocab_(word_vocab),
      init_rng_(nn::derive_seed(seed, kInitStream)),
      backbone(store, backbone_config(config), init_rng_),
      temporal(store, temporal_config(config), init_rng_),
      inter_head(store, "heads.inter", config.dim, gloss_classes, init_rng_),
      final_head(store, "heads.final", config.dim, gloss_classes, init_rng_) {
  if (gloss_classes < 2) throw std::invalid_argument("need at least one gloss besides the blank");
  if (config.protocol == Protocol::kS2GT) {
    heads::DecoderConfig d;
    d.n_blocks = config.decoder_blocks;
    d.dim = config.dim;
    d.heads = config.heads;
    d.ffn_hidden = config.ffn_hidden;
    d.max_len = config.max_words;
    d.vocab_size = word_vocab;
    decoder.emplace(store, d, init_rng_);
  }
}

template <typename T>
ModelOutput<T> Model<T>::forward(const sparse::SparseTensor<T>& input, bool training,
                                 sparse::NormUpdates* updates) const {
  ModelOutput<T> out;
  out.gata = temporal.forward(backbone.forward(input, training, updates));
  out.inter_log_probs = inter_head(out.gata.fused.tokens);
  out.final_log_probs = final_head(out.gata.out);
  return out;
}

std::size_t segments_for(const ModelConfig& config, const EventStream& stream) {
  return config.segments > 0 ? config.segments : segments_for_window(stream, config.window_us);
}

VoxelGrid encode_stream(const ModelConfig& config, const EventStream& stream) {
  return encode_clip(stream, segments_for(config, stream), config.bins);
}

template <typename T>
ClipData<T> load_clip(const ModelConfig& config, const synth::Corpus& corpus, const synth::ClipRecord& record) {
  const auto path = (std::filesystem::path(corpus.root) / record.path).string();
  const auto grid = encode_stream(config, read_event_file_path(path));
  return {record.id, sparse::sparsify<T>(grid, static_cast<float>(config.site_threshold)), record.glosses,
          record.words};
}

template <typename T>
std::vector<ClipData<T>> load_split(const ModelConfig& config, const synth::Corpus& corpus, const std::string& split,
                                    std::size_t threads) {
  const auto& records = corpus.split(split);
  std::vector<ClipData<T>> out(records.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size() && !failed; i = next++) {
      try {
        out[i] = load_clip<T>(config, corpus, records[i]);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, records.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

template <typename T>
Losses<T> forward_s2g(const Model<T>& model, const ClipData<T>& clip, const LossWeights& w, bool training,
                      sparse::NormUpdates* updates) {
  Losses<T> res;
  res.output = model.forward(clip.input, training, updates);
  auto inter = heads::ctc_loss(res.output.inter_log_probs, clip.glosses);
  auto fin = heads::ctc_loss(res.output.final_log_probs, clip.glosses);
  res.l_inter = inter.loss;
  res.l_final = fin.loss;
  res.feasible = inter.feasible && fin.feasible;
  if (!res.feasible) {
    res.l_slr = Tensor<T>::scalar(std::numeric_limits<T>::infinity());
    return res;
  }
  res.l_slr = add(scalar_mul(res.l_inter, static_cast<T>(w.inter)), scalar_mul(res.l_final, static_cast<T>(w.final)));
  return res;
}

template <typename T>
Losses<T> forward_s2gt(const Model<T>& model, const ClipData<T>& clip, const LossWeights& w, bool training,
                       sparse::NormUpdates* updates) {
  if (!model.decoder) throw std::logic_error("forward_s2gt needs a model built for the s2gt protocol");
  auto res = forward_s2g(model, clip, w, training, updates);
  const auto [inputs, targets] = heads::teacher_forcing_pair(clip.words);
  res.l_ce = heads::cross_entropy((*model.decoder)(res.output.gata.out, inputs), targets);
  res.l_slt = res.feasible ? add(res.l_slr, scalar_mul(*res.l_ce, static_cast<T>(w.ce)))
                           : Tensor<T>::scalar(std::numeric_limits<T>::infinity());
  return res;
}

template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, const Gradients<T>& grads, AdamState& state, double lr,
               const AdamOptions& o) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0f);
      state.v.emplace_back(p.size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  std::vector<T> values;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) throw std::invalid_argument("adam state shape mismatch");
    const bool has = grads.has(p);
    const auto g = has ? grads.of(p) : std::span<const T>{};
    const auto data = p.data();
    values.assign(data.begin(), data.end());
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double gk = (has ? static_cast<double>(g[k]) : 0.0) + o.weight_decay * static_cast<double>(values[k]);
      if (checked_mode() && !std::isfinite(gk)) throw NumericError("adam_step: non-finite gradient");
      m[k] = static_cast<float>(o.beta1 * m[k] + (1.0 - o.beta1) * gk);
      v[k] = static_cast<float>(o.beta2 * v[k] + (1.0 - o.beta2) * gk * gk);
      const double mhat = m[k] / bc1, vhat = v[k] / bc2;
      values[k] = static_cast<T>(static_cast<double>(values[k]) - lr * mhat / (std::sqrt(vhat) + o.eps));
    }
    p.assign(values);
  }
}

double cosine_lr(double epoch, std::size_t total_epochs, double lr0) {
  if (total_epochs == 0) throw std::invalid_argument("cosine_lr: total epochs must be positive");
  if (epoch < 0 || epoch > static_cast<double>(total_epochs))
    throw std::invalid_argument("cosine_lr: epoch outside [0, total]");
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(total_epochs)));
}

#define EVSIGN_INSTANTIATE(T)                                                                                     \
  template class Model<T>;                                                                                        \
  template ClipData<T> load_clip<T>(const ModelConfig&, const synth::Corpus&, const synth::ClipRecord&);          \
  template std::vector<ClipData<T>> load_split<T>(const ModelConfig&, const synth::Corpus&, const std::string&,   \
                                                  std::size_t);                                                   \
  template Losses<T> forward_s2g(const Model<T>&, const ClipData<T>&, const LossWeights&, bool,                   \
                                 sparse::NormUpdates*);                                                           \
  template Losses<T> forward_s2gt(const Model<T>&, const ClipData<T>&, const LossWeights&, bool,                  \
                                  sparse::NormUpdates*);                                                          \
  template void adam_step(const std::vector<Tensor<T>>&, const Gradients<T>&, AdamState&, double,                 \
                          const AdamOptions&);

EVSIGN_INSTANTIATE(float)
EVSIGN_INSTANTIATE(double)

#undef EVSIGN_INSTANTIATE

}  // namespace evsign::pipeline
