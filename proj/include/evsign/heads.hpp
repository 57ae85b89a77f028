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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evsign/nn.hpp"
#include "evsign/tensor.hpp"

namespace evsign::heads {

using Ids = std::vector<std::int64_t>;

// Gloss ids start at 1; 0 is the CTC blank.
class GlossVocab {
 public:
  static constexpr std::int64_t kBlank = 0;

  GlossVocab() = default;
  explicit GlossVocab(std::vector<std::string> glosses);

  std::size_t size() const { return glosses_.size() + 1; }
  std::size_t gloss_count() const { return glosses_.size(); }
  const std::string& name(std::int64_t id) const;
  std::int64_t id(const std::string& gloss) const;
  const std::vector<std::string>& glosses() const { return glosses_; }

 private:
  std::vector<std::string> glosses_;
};

class WordVocab {
 public:
  static constexpr std::int64_t kBos = 0, kEos = 1, kPad = 2, kUnk = 3;

  WordVocab();
  // Specials are prepended; duplicates and specials in `words` are rejected.
  explicit WordVocab(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::int64_t id) const;
  // Unknown words map to <unk>.
  std::int64_t id(const std::string& word) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
};

template <typename T>
class RecognitionHead {
 public:
  RecognitionHead() = default;
  RecognitionHead(nn::ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t classes,
                  nn::Rng& rng);
  // L x C -> L x Y log-probabilities.
  Tensor<T> operator()(const Tensor<T>& tokens) const;

  nn::Linear<T> proj;
};

// Smallest frame count able to emit `target`.
std::size_t ctc_min_frames(std::span<const std::int64_t> target);

template <typename T>
struct CtcResult {
  Tensor<T> loss;        // scalar; +inf constant when infeasible
  bool feasible = true;
};

// Negative log-likelihood of `target` under per-frame log-probabilities
// (L x Y), marginalized over blank-extended alignments.
template <typename T>
CtcResult<T> ctc_loss(const Tensor<T>& log_probs, std::span<const std::int64_t> target,
                      std::int64_t blank = GlossVocab::kBlank);

// Best path: argmax per frame, merge repeats, drop blanks.
template <typename T>
Ids ctc_greedy_decode(const Tensor<T>& log_probs, std::int64_t blank = GlossVocab::kBlank);

struct DecoderConfig {
  std::size_t n_blocks = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 256;
  std::size_t max_len = 24;
  std::size_t vocab_size = 0;
};

template <typename T>
class TranslationDecoder {
 public:
  TranslationDecoder() = default;
  TranslationDecoder(nn::ParamStore<T>& store, const DecoderConfig& config, nn::Rng& rng);

  // Teacher forcing. memory: L x C, inputs: <bos> w1 .. w_{U-1}. Returns U x |W|.
  Tensor<T> operator()(const Tensor<T>& memory, std::span<const std::int64_t> inputs) const;

  // Greedy decoding from <bos>; stops at <eos> or max_len words.
  Ids generate(const Tensor<T>& memory, std::size_t max_len) const;

  const DecoderConfig& config() const { return config_; }

 private:
  struct Block {
    nn::LayerNorm<T> ln1, ln2, ln3;
    nn::MultiHeadAttention<T> self_attn, cross_attn;
    nn::FeedForward<T> ffn;
  };
  DecoderConfig config_;
  Tensor<T> embedding_;  // |W| x C
  std::vector<Block> blocks_;
  nn::LayerNorm<T> final_ln_;
  nn::Linear<T> out_;
};

// Decoder inputs (<bos> + words) and targets (words + <eos>).
std::pair<Ids, Ids> teacher_forcing_pair(std::span<const std::int64_t> words);

// Mean NLL of `targets` over positions whose target is not `pad`.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int64_t> targets,
                        std::int64_t pad = WordVocab::kPad);

}  // namespace evsign::heads
