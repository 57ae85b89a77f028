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

#include "evsign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace evsign::metrics {

namespace {

template <typename Tok>
WerBreakdown wer_impl(const std::vector<Tok>& ref, const std::vector<Tok>& hyp) {
  if (ref.empty()) throw std::invalid_argument("WER needs a non-empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }

  WerBreakdown out;
  out.n_ref = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i, j) == at(i - 1, j - 1)) {
      --i, --j;
    } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
      ++out.n_sub;
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.n_del;
      --i;
    } else {
      ++out.n_ins;
      --j;
    }
  }
  out.wer = static_cast<double>(out.errors()) / static_cast<double>(n);
  return out;
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[Tokens(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

nlohmann::json tokens_json(const Tokens& t) { return nlohmann::json(t); }

}  // namespace

WerBreakdown wer(const Tokens& ref, const Tokens& hyp) { return wer_impl(ref, hyp); }
WerBreakdown wer(const std::vector<std::int64_t>& ref, const std::vector<std::int64_t>& hyp) {
  return wer_impl(ref, hyp);
}

std::vector<double> bleu(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps, std::size_t max_n) {
  if (refs.empty()) throw std::invalid_argument("BLEU needs a non-empty corpus");
  if (refs.size() != hyps.size()) throw std::invalid_argument("BLEU corpus size mismatch");
  std::vector<double> matches(max_n, 0.0), totals(max_n, 0.0);
  double ref_len = 0, hyp_len = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    ref_len += static_cast<double>(refs[k].size());
    hyp_len += static_cast<double>(hyps[k].size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto h = ngrams(hyps[k], n);
      const auto r = ngrams(refs[k], n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        matches[n - 1] += static_cast<double>(std::min(count, it == r.end() ? 0 : it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  const double bp = hyp_len == 0 ? 0.0 : (hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len));
  std::vector<double> out(max_n, 0.0);
  double log_sum = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (matches[n - 1] == 0 || totals[n - 1] == 0) break;  // later orders stay 0
    log_sum += std::log(matches[n - 1] / totals[n - 1]);
    out[n - 1] = 100.0 * bp * std::exp(log_sum / static_cast<double>(n));
  }
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_pair(const Tokens& ref, const Tokens& hyp, double beta) {
  if (ref.empty()) throw std::invalid_argument("ROUGE-L needs a non-empty reference");
  if (hyp.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(ref, hyp));
  if (lcs == 0) return 0.0;
  const double recall = lcs / static_cast<double>(ref.size());
  const double precision = lcs / static_cast<double>(hyp.size());
  const double b2 = beta * beta;
  return (1 + b2) * recall * precision / (recall + b2 * precision);
}

double rouge_l(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps, double beta) {
  if (refs.empty()) throw std::invalid_argument("ROUGE-L needs a non-empty corpus");
  if (refs.size() != hyps.size()) throw std::invalid_argument("ROUGE-L corpus size mismatch");
  double total = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) total += rouge_l_pair(refs[k], hyps[k], beta);
  return total / static_cast<double>(refs.size());
}

ScoreReport aggregate(const std::string& split, const std::vector<ClipRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("cannot score an empty split");
  ScoreReport rep;
  rep.split = split;
  rep.n_clips = rows.size();
  double macro = 0;
  bool text = true;
  for (const auto& row : rows) {
    const auto w = wer(row.gloss_ref, row.gloss_hyp);
    rep.wer.n_sub += w.n_sub;
    rep.wer.n_ins += w.n_ins;
    rep.wer.n_del += w.n_del;
    rep.wer.n_ref += w.n_ref;
    macro += w.wer;
    text = text && row.text_ref && row.text_hyp;
  }
  rep.wer.wer = static_cast<double>(rep.wer.errors()) / static_cast<double>(rep.wer.n_ref);
  rep.macro_wer = macro / static_cast<double>(rows.size());
  rep.has_translation = text;
  if (text) {
    std::vector<Tokens> refs, hyps;
    for (const auto& row : rows) {
      refs.push_back(*row.text_ref);
      hyps.push_back(*row.text_hyp);
    }
    const auto b = bleu(refs, hyps, 4);
    std::copy(b.begin(), b.end(), rep.bleu.begin());
    rep.rouge_l = rouge_l(refs, hyps);
  }
  return rep;
}

nlohmann::json to_json(const ScoreReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["n_clips"] = r.n_clips;
  j["wer"] = r.wer.wer;
  j["wer_breakdown"] = {{"sub", r.wer.n_sub}, {"ins", r.wer.n_ins}, {"del", r.wer.n_del}, {"ref", r.wer.n_ref}};
  j["macro_wer"] = r.macro_wer;
  if (r.has_translation) {
    j["bleu"] = r.bleu;
    j["rouge_l"] = r.rouge_l;
  } else {
    j["bleu"] = nullptr;
    j["rouge_l"] = nullptr;
  }
  return j;
}

ScoreReport report_from_json(const nlohmann::json& j) {
  ScoreReport r;
  r.split = j.at("split").get<std::string>();
  r.n_clips = j.at("n_clips").get<std::size_t>();
  r.wer.wer = j.at("wer").get<double>();
  const auto& b = j.at("wer_breakdown");
  r.wer.n_sub = b.at("sub").get<std::size_t>();
  r.wer.n_ins = b.at("ins").get<std::size_t>();
  r.wer.n_del = b.at("del").get<std::size_t>();
  r.wer.n_ref = b.at("ref").get<std::size_t>();
  r.macro_wer = j.at("macro_wer").get<double>();
  r.has_translation = !j.at("bleu").is_null();
  if (r.has_translation) {
    r.bleu = j.at("bleu").get<std::array<double, 4>>();
    r.rouge_l = j.at("rouge_l").get<double>();
  }
  return r;
}

nlohmann::json to_json(const ClipRow& row) {
  nlohmann::json j;
  j["clip_id"] = row.clip_id;
  j["gloss_hyp"] = tokens_json(row.gloss_hyp);
  j["gloss_ref"] = tokens_json(row.gloss_ref);
  j["text_hyp"] = row.text_hyp ? tokens_json(*row.text_hyp) : nlohmann::json(nullptr);
  j["text_ref"] = row.text_ref ? tokens_json(*row.text_ref) : nlohmann::json(nullptr);
  return j;
}

Tokens split_tokens(const std::string& text) {
  Tokens out;
  std::istringstream in(text);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace evsign::metrics
