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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "evsign/metrics.hpp"
#include "oracles.hpp"

namespace evsign::metrics {
namespace {

Tokens toks(const std::string& s) { return split_tokens(s); }

Tokens as_tokens(const std::vector<int>& v) {
  Tokens t;
  for (int x : v) t.push_back(std::string(1, static_cast<char>('a' + x)));
  return t;
}

TEST(Wer, HandCases) {
  EXPECT_EQ(wer(toks("a b c"), toks("a b c")).wer, 0.0);
  const auto w = wer(toks("a b c d"), toks("a x c"));
  EXPECT_EQ(w.n_sub, 1u);
  EXPECT_EQ(w.n_del, 1u);
  EXPECT_EQ(w.n_ins, 0u);
  EXPECT_DOUBLE_EQ(w.wer, 0.5);
  EXPECT_DOUBLE_EQ(wer(toks("a"), toks("b c d")).wer, 3.0);
}

TEST(Wer, EmptyReferenceIsAnErrorEmptyHypothesisIsAllDeletions) {
  EXPECT_THROW(wer(Tokens{}, toks("a b")), std::invalid_argument);
  const auto w = wer(toks("a b c"), Tokens{});
  EXPECT_EQ(w.n_del, 3u);
  EXPECT_EQ(w.wer, 1.0);
}

TEST(Wer, SingleDeletion) {
  const auto w = wer(toks("a b c"), toks("a c"));
  EXPECT_EQ(w.n_del, 1u);
  EXPECT_EQ(w.errors(), 1u);
  EXPECT_DOUBLE_EQ(w.wer, 1.0 / 3.0);
}

TEST(Wer, MatchesExhaustiveEditDistance) {
  const auto strings = oracle::all_strings(3, 4);
  for (const auto& from : strings) {
    if (from.empty()) continue;
    const auto dist = oracle::edit_distances_from(from, 3, 5);
    for (const auto& to : strings) {
      const auto w = wer(as_tokens(from), as_tokens(to));
      ASSERT_EQ(w.errors(), static_cast<std::size_t>(dist.at(to)));
      ASSERT_DOUBLE_EQ(w.wer, static_cast<double>(dist.at(to)) / static_cast<double>(from.size()));
    }
  }
}

TEST(Wer, IdOverloadAgrees) {
  const std::vector<std::int64_t> r{1, 2, 3, 4}, h{1, 3, 3};
  const auto a = wer(r, h);
  const auto b = wer(toks("1 2 3 4"), toks("1 3 3"));
  EXPECT_EQ(a.errors(), b.errors());
  EXPECT_EQ(a.wer, b.wer);
}

TEST(Bleu, BrevityPenaltyHandCase) {
  const auto b = bleu({toks("the cat sat")}, {toks("the cat")});
  EXPECT_NEAR(b[0], 100.0 * std::exp(-0.5), 1e-9);
  EXPECT_NEAR(b[0], 60.653, 1e-3);
}

TEST(Bleu, IdenticalIsHundredAndDisjointIsZero) {
  const std::vector<Tokens> refs{toks("a b c d e"), toks("x y z w")};
  for (double v : bleu(refs, refs)) EXPECT_EQ(v, 100.0);
  for (double v : bleu({toks("a b c")}, {toks("d e f")})) EXPECT_EQ(v, 0.0);
}

TEST(Bleu, ClipsRepeatedNgrams) {
  // p1 = 2/7 under clipping ("the" appears twice in the reference)
  const auto b = bleu({toks("the cat is on the mat now")}, {toks("the the the the the the the")});
  EXPECT_NEAR(b[0], 100.0 * 2.0 / 7.0, 1e-9);
  EXPECT_EQ(b[1], 0.0);
}

TEST(Bleu, UnigramIgnoresOrderHigherOrdersDoNot) {
  const auto ref = toks("a b c d e f");
  auto hyp = ref;
  std::reverse(hyp.begin(), hyp.end());
  const auto b = bleu({ref}, {hyp});
  EXPECT_EQ(b[0], 100.0);
  EXPECT_LT(b[1], 100.0);
}

TEST(Bleu, CorpusLevelPoolsCounts) {
  // counts pooled: p1 = (2+1)/(2+2), c = 4, r = 5
  const auto b = bleu({toks("a b c"), toks("d e")}, {toks("a b"), toks("d x")});
  EXPECT_NEAR(b[0], 100.0 * 0.75 * std::exp(1.0 - 5.0 / 4.0), 1e-9);
}

TEST(Bleu, MismatchedCorporaThrow) {
  EXPECT_THROW(bleu({toks("a")}, {}), std::invalid_argument);
}

TEST(Rouge, HandCase) {
  const double r = rouge_l_pair(toks("a b c d"), toks("a c d"));
  EXPECT_NEAR(r, 2 * 0.75 / 1.75, 1e-12);
  EXPECT_NEAR(r, 0.857, 1e-3);
}

TEST(Rouge, IdenticalIsOneDisjointIsZero) {
  EXPECT_EQ(rouge_l_pair(toks("a b c"), toks("a b c")), 1.0);
  EXPECT_EQ(rouge_l_pair(toks("a b c"), toks("d e")), 0.0);
  EXPECT_EQ(rouge_l({toks("a b"), toks("c")}, {toks("a b"), toks("c")}), 1.0);
  EXPECT_EQ(rouge_l_pair(toks("a b"), Tokens{}), 0.0);
  EXPECT_THROW(rouge_l_pair(Tokens{}, toks("a")), std::invalid_argument);
}

TEST(Rouge, LcsIsSymmetric) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    Tokens a, b;
    for (std::size_t k = 1 + rng() % 8; k > 0; --k) a.push_back(std::string(1, static_cast<char>('a' + rng() % 4)));
    for (std::size_t k = rng() % 8; k > 0; --k) b.push_back(std::string(1, static_cast<char>('a' + rng() % 4)));
    EXPECT_EQ(lcs_length(a, b), lcs_length(b, a));
    if (b.empty()) continue;
    const double r = rouge_l_pair(a, b);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Aggregate, MicroWerAndReportRoundTrip) {
  std::vector<ClipRow> rows{
      {"c0", toks("G01 G02"), toks("G01"), toks("car doctor"), toks("car doctor")},
      {"c1", toks("G03 G04 G05 G06"), toks("G03 G04 G05 G06"), toks("a b"), toks("a")},
  };
  const auto rep = aggregate("dev", rows);
  EXPECT_EQ(rep.n_clips, 2u);
  EXPECT_DOUBLE_EQ(rep.wer.wer, 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(rep.macro_wer, 0.25);
  EXPECT_TRUE(rep.has_translation);
  const auto back = report_from_json(to_json(rep));
  EXPECT_EQ(to_json(back), to_json(rep));
}

TEST(Tokens, SplitAndJoin) {
  EXPECT_EQ(split_tokens("  a\tb  c \n"), (Tokens{"a", "b", "c"}));
  EXPECT_EQ(join_tokens({"a", "b"}), "a b");
  EXPECT_TRUE(split_tokens("").empty());
}

}  // namespace
}  // namespace evsign::metrics
