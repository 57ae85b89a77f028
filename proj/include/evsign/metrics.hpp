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

#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace evsign::metrics {

using Tokens = std::vector<std::string>;

struct WerBreakdown {
  double wer = 0.0;
  std::size_t n_sub = 0;
  std::size_t n_ins = 0;
  std::size_t n_del = 0;
  std::size_t n_ref = 0;

  std::size_t errors() const { return n_sub + n_ins + n_del; }
};

// Unit-cost Levenshtein alignment. Operation counts come from a traceback
// that prefers match, then substitution, deletion, insertion.
// Throws std::invalid_argument for an empty reference.
WerBreakdown wer(const Tokens& ref, const Tokens& hyp);
WerBreakdown wer(const std::vector<std::int64_t>& ref, const std::vector<std::int64_t>& hyp);

// Cumulative corpus BLEU-1..max_n on a 0-100 scale, single reference,
// clipped counts, brevity penalty, no smoothing.
std::vector<double> bleu(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps, std::size_t max_n = 4);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

// LCS F-measure for one pair, in [0, 1].
double rouge_l_pair(const Tokens& ref, const Tokens& hyp, double beta = 1.0);
// Mean of rouge_l_pair over the corpus.
double rouge_l(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps, double beta = 1.0);

struct ClipRow {
  std::string clip_id;
  Tokens gloss_ref;
  Tokens gloss_hyp;
  std::optional<Tokens> text_ref;
  std::optional<Tokens> text_hyp;
};

struct ScoreReport {
  std::string split;
  std::size_t n_clips = 0;
  WerBreakdown wer;  // micro average over the split
  double macro_wer = 0.0;
  bool has_translation = false;
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
};

// Micro WER (total edit ops / total reference length), corpus BLEU, mean
// ROUGE-L. Translation scores are computed only when every row carries text.
ScoreReport aggregate(const std::string& split, const std::vector<ClipRow>& rows);

nlohmann::json to_json(const ScoreReport& report);
ScoreReport report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClipRow& row);

Tokens split_tokens(const std::string& text);
std::string join_tokens(const Tokens& tokens);

}  // namespace evsign::metrics
