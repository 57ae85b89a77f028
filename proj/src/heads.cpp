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

#include "evsign/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace evsign::heads {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

const char* const kSpecials[] = {"<bos>", "<eos>", "<pad>", "<unk>"};

}  // namespace

GlossVocab::GlossVocab(std::vector<std::string> glosses) : glosses_(std::move(glosses)) {
  std::unordered_set<std::string> seen;
  for (const auto& g : glosses_)
    if (!seen.insert(g).second) throw std::invalid_argument("duplicate gloss " + g);
}

const std::string& GlossVocab::name(std::int64_t id) const {
  if (id < 1 || static_cast<std::size_t>(id) > glosses_.size())
    throw std::out_of_range("gloss id " + std::to_string(id) + " outside vocabulary");
  return glosses_[static_cast<std::size_t>(id - 1)];
}

std::int64_t GlossVocab::id(const std::string& gloss) const {
  const auto it = std::find(glosses_.begin(), glosses_.end(), gloss);
  if (it == glosses_.end()) throw std::out_of_range("unknown gloss " + gloss);
  return static_cast<std::int64_t>(it - glosses_.begin()) + 1;
}

WordVocab::WordVocab() : words_(std::begin(kSpecials), std::end(kSpecials)) {}

WordVocab::WordVocab(const std::vector<std::string>& words) : WordVocab() {
  std::unordered_set<std::string> seen(words_.begin(), words_.end());
  for (const auto& w : words) {
    if (!seen.insert(w).second) throw std::invalid_argument("duplicate or reserved word " + w);
    words_.push_back(w);
  }
}

const std::string& WordVocab::word(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size())
    throw std::out_of_range("word id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

std::int64_t WordVocab::id(const std::string& word) const {
  const auto it = std::find(words_.begin(), words_.end(), word);
  return it == words_.end() ? kUnk : static_cast<std::int64_t>(it - words_.begin());
}

template <typename T>
RecognitionHead<T>::RecognitionHead(nn::ParamStore<T>& store, const std::string& name, std::size_t dim,
                                    std::size_t classes, nn::Rng& rng)
    : proj(store, name, dim, classes, rng) {}

template <typename T>
Tensor<T> RecognitionHead<T>::operator()(const Tensor<T>& tokens) const {
  if (tokens.rank() != 2 || tokens.dim(1) != proj.weight.dim(0))
    throw TensorError("recognition head: expected L x " + std::to_string(proj.weight.dim(0)) + ", got " +
                      shape_str(tokens.shape()));
  return log_softmax(proj(tokens), 1);
}

std::size_t ctc_min_frames(std::span<const std::int64_t> target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i) repeats += target[i] == target[i - 1];
  return target.size() + repeats;
}

template <typename T>
CtcResult<T> ctc_loss(const Tensor<T>& log_probs, std::span<const std::int64_t> target, std::int64_t blank) {
  if (log_probs.rank() != 2 || log_probs.dim(0) == 0) throw TensorError("ctc_loss: expected non-empty L x Y");
  const std::size_t frames = log_probs.dim(0), classes = log_probs.dim(1);
  if (blank < 0 || static_cast<std::size_t>(blank) >= classes) throw TensorError("ctc_loss: blank out of range");
  for (const auto g : target)
    if (g < 0 || static_cast<std::size_t>(g) >= classes || g == blank)
      throw TensorError("ctc_loss: target id " + std::to_string(g) + " invalid");

  if (frames < ctc_min_frames(target))
    return {Tensor<T>::scalar(std::numeric_limits<T>::infinity()), false};

  // Blank-extended target: b g1 b g2 ... gZ b.
  const std::size_t s_len = 2 * target.size() + 1;
  std::vector<std::size_t> ext(s_len, static_cast<std::size_t>(blank));
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = static_cast<std::size_t>(target[i]);
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != static_cast<std::size_t>(blank) && ext[s] != ext[s - 2]; };

  const auto lp = log_probs.data();
  auto at = [&](std::size_t t, std::size_t k) { return static_cast<double>(lp[t * classes + k]); };

  std::vector<double> alpha(frames * s_len, kNegInf), beta(frames * s_len, kNegInf);
  alpha[0] = at(0, ext[0]);
  if (s_len > 1) alpha[1] = at(0, ext[1]);
  for (std::size_t t = 1; t < frames; ++t)
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = alpha[(t - 1) * s_len + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
      alpha[t * s_len + s] = a == kNegInf ? kNegInf : a + at(t, ext[s]);
    }
  const std::size_t last = (frames - 1) * s_len;
  beta[last + s_len - 1] = at(frames - 1, ext[s_len - 1]);
  if (s_len > 1) beta[last + s_len - 2] = at(frames - 1, ext[s_len - 2]);
  for (std::size_t t = frames - 1; t-- > 0;)
    for (std::size_t s = 0; s < s_len; ++s) {
      double b = beta[(t + 1) * s_len + s];
      if (s + 1 < s_len) b = log_add(b, beta[(t + 1) * s_len + s + 1]);
      if (s + 2 < s_len && skip_ok(s + 2)) b = log_add(b, beta[(t + 1) * s_len + s + 2]);
      beta[t * s_len + s] = b == kNegInf ? kNegInf : b + at(t, ext[s]);
    }

  double log_p = alpha[last + s_len - 1];
  if (s_len > 1) log_p = log_add(log_p, alpha[last + s_len - 2]);
  if (log_p == kNegInf) return {Tensor<T>::scalar(std::numeric_limits<T>::infinity()), false};

  return {Tensor<T>::make(
              "ctc_loss", {}, {static_cast<T>(-log_p)}, {log_probs},
              [alpha = std::move(alpha), beta = std::move(beta), ext = std::move(ext), frames, classes, s_len,
               log_p](const Node<T>& self, std::span<const T> g, std::vector<std::span<T>>& pg) {
                if (pg[0].empty()) return;
                const auto& lp = self.parents[0]->data;
                std::vector<double> acc(classes);
                for (std::size_t t = 0; t < frames; ++t) {
                  std::fill(acc.begin(), acc.end(), kNegInf);
                  for (std::size_t s = 0; s < s_len; ++s)
                    acc[ext[s]] = log_add(acc[ext[s]], alpha[t * s_len + s] + beta[t * s_len + s]);
                  for (std::size_t k = 0; k < classes; ++k) {
                    if (acc[k] == kNegInf) continue;
                    const double occupancy = std::exp(acc[k] - static_cast<double>(lp[t * classes + k]) - log_p);
                    pg[0][t * classes + k] -= static_cast<T>(static_cast<double>(g[0]) * occupancy);
                  }
                }
              }),
          true};
}

template <typename T>
Ids ctc_greedy_decode(const Tensor<T>& log_probs, std::int64_t blank) {
  if (log_probs.rank() != 2) throw TensorError("ctc_greedy_decode: expected L x Y");
  const std::size_t frames = log_probs.dim(0), classes = log_probs.dim(1);
  const auto lp = log_probs.data();
  Ids out;
  std::int64_t prev = -1;
  for (std::size_t t = 0; t < frames; ++t) {
    const auto row = lp.subspan(t * classes, classes);
    const auto best = static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

template <typename T>
TranslationDecoder<T>::TranslationDecoder(nn::ParamStore<T>& store, const DecoderConfig& config, nn::Rng& rng)
    : config_(config) {
  if (config.vocab_size <= static_cast<std::size_t>(WordVocab::kUnk))
    throw std::invalid_argument("decoder vocabulary must include the special tokens");
  if (config.n_blocks == 0) throw std::invalid_argument("decoder needs at least one block");
  if (config.max_len == 0) throw std::invalid_argument("decoder max_len must be at least 1");
  embedding_ = store.add("decoder.embedding", {config.vocab_size, config.dim}, nn::Init::kXavier, rng);
  for (std::size_t b = 0; b < config.n_blocks; ++b) {
    const std::string p = "decoder.block" + std::to_string(b);
    Block blk;
    blk.ln1 = nn::LayerNorm<T>(store, p + ".ln1", config.dim, rng);
    blk.self_attn = nn::MultiHeadAttention<T>(store, p + ".self_attn", config.dim, config.heads, rng);
    blk.ln2 = nn::LayerNorm<T>(store, p + ".ln2", config.dim, rng);
    blk.cross_attn = nn::MultiHeadAttention<T>(store, p + ".cross_attn", config.dim, config.heads, rng);
    blk.ln3 = nn::LayerNorm<T>(store, p + ".ln3", config.dim, rng);
    blk.ffn = nn::FeedForward<T>(store, p + ".ffn", config.dim, config.ffn_hidden, rng);
    blocks_.push_back(std::move(blk));
  }
  final_ln_ = nn::LayerNorm<T>(store, "decoder.final_ln", config.dim, rng);
  out_ = nn::Linear<T>(store, "decoder.out", config.dim, config.vocab_size, rng);
}

template <typename T>
Tensor<T> TranslationDecoder<T>::operator()(const Tensor<T>& memory, std::span<const std::int64_t> inputs) const {
  if (inputs.empty()) throw std::invalid_argument("decoder input must not be empty");
  if (memory.rank() != 2 || memory.dim(1) != config_.dim)
    throw TensorError("decoder: memory must be L x " + std::to_string(config_.dim));
  for (const auto id : inputs)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw std::out_of_range("decoder input id " + std::to_string(id) + " outside vocabulary");
  auto x = add(scalar_mul(embedding_lookup(embedding_, inputs), static_cast<T>(std::sqrt(config_.dim))),
               nn::sinusoidal_pe<T>(inputs.size(), config_.dim));
  nn::AttentionOptions<T> causal;
  causal.causal = true;
  for (const auto& blk : blocks_) {
    const auto h1 = blk.ln1(x);
    x = add(x, blk.self_attn(h1, h1, h1, causal).out);
    x = add(x, blk.cross_attn(blk.ln2(x), memory, memory).out);
    x = add(x, blk.ffn(blk.ln3(x)));
  }
  return out_(final_ln_(x));
}

template <typename T>
Ids TranslationDecoder<T>::generate(const Tensor<T>& memory, std::size_t max_len) const {
  if (max_len == 0) throw std::invalid_argument("max_len must be at least 1");
  NoGradGuard guard;
  Ids inputs{WordVocab::kBos};
  Ids out;
  while (out.size() < max_len) {
    const auto logits = (*this)(memory, inputs);
    const auto row = logits.data().subspan((inputs.size() - 1) * config_.vocab_size, config_.vocab_size);
    const auto next = static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == WordVocab::kEos) break;
    out.push_back(next);
    inputs.push_back(next);
  }
  return out;
}

std::pair<Ids, Ids> teacher_forcing_pair(std::span<const std::int64_t> words) {
  Ids in{WordVocab::kBos}, target(words.begin(), words.end());
  in.insert(in.end(), words.begin(), words.end());
  target.push_back(WordVocab::kEos);
  return {in, target};
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int64_t> targets, std::int64_t pad) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw TensorError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                      std::to_string(targets.size()) + " targets");
  std::vector<std::size_t> rows, cols;
  for (std::size_t u = 0; u < targets.size(); ++u) {
    if (targets[u] == pad) continue;
    if (targets[u] < 0 || static_cast<std::size_t>(targets[u]) >= logits.dim(1))
      throw std::out_of_range("cross_entropy: target id outside vocabulary");
    rows.push_back(u);
    cols.push_back(static_cast<std::size_t>(targets[u]));
  }
  if (rows.empty()) throw std::invalid_argument("cross_entropy: every target position is padding");
  return scalar_mul(mean(gather_2d(log_softmax(logits, 1), rows, cols)), T(-1));
}

#define EVSIGN_INSTANTIATE(T)                                                                           \
  template class RecognitionHead<T>;                                                                    \
  template CtcResult<T> ctc_loss(const Tensor<T>&, std::span<const std::int64_t>, std::int64_t);        \
  template Ids ctc_greedy_decode(const Tensor<T>&, std::int64_t);                                       \
  template class TranslationDecoder<T>;                                                                 \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int64_t>, std::int64_t);

EVSIGN_INSTANTIATE(float)
EVSIGN_INSTANTIATE(double)

#undef EVSIGN_INSTANTIATE

}  // namespace evsign::heads
