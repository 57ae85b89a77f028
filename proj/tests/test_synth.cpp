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
#include <set>

#include <nlohmann/json.hpp>

#include "evsign/synth.hpp"
#include "test_util.hpp"

namespace evsign::synth {
namespace {

using testing_util::TempDir;

CorpusConfig tiny() {
  CorpusConfig c;
  c.n_glosses = 4;
  c.n_clips = 12;
  c.train_fraction = 0.5;
  c.dev_fraction = 0.25;
  c.test_fraction = 0.25;
  c.max_seq = 3;
  c.sensor.width = 16;
  c.sensor.height = 16;
  return c;
}

TEST(CorpusConfig, DefaultSplitIs300_40_40) {
  const auto s = CorpusConfig{}.split_sizes();
  EXPECT_EQ(s, (std::array<std::size_t, 3>{300, 40, 40}));
}

TEST(CorpusConfig, ValidationCatchesBadValues) {
  auto c = CorpusConfig{};
  EXPECT_NO_THROW(c.validate());
  c.train_fraction = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.max_seq = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.sensor.width = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(CorpusConfig, JsonRoundTrip) {
  const auto c = tiny();
  EXPECT_EQ(to_json(corpus_config_from_json(to_json(c))), to_json(c));
}

TEST(Templates, DeterministicAndWithinBounds) {
  const auto a = make_gloss_vocab(12, 7), b = make_gloss_vocab(12, 7), c = make_gloss_vocab(12, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (std::size_t g = 0; g < a.size(); ++g) {
    EXPECT_EQ(a[g].gloss_id, static_cast<std::int64_t>(g + 1));
    EXPECT_GE(a[g].duration_ms, 240);
    EXPECT_LE(a[g].duration_ms, 400);
    for (const auto& p : a[g].waypoints) {
      EXPECT_GE(p.x, 0.15);
      EXPECT_LE(p.x, 0.85);
    }
  }
}

TEST(Templates, DotFollowsWaypoints) {
  GlossTemplate t{1, {{0.0, 0.0}, {1.0, 0.0}}, 100};
  SensorConfig s;
  EXPECT_EQ(dot_position(t, 0, s), (Point{0, 0}));
  EXPECT_EQ(dot_position(t, 50000, s), (Point{15.5, 0}));
  EXPECT_EQ(dot_position(t, 1e9, s), (Point{31, 0}));
}

TEST(Events, SortedInBoundsAndBothPolarities) {
  const auto vocab = make_gloss_vocab(3, 11);
  const SensorConfig s;
  const auto stream = emit_events(vocab[0], s);
  ASSERT_FALSE(stream.events.empty());
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const auto& e = stream.events[i];
    EXPECT_LT(e.x, s.width);
    EXPECT_LT(e.y, s.height);
    EXPECT_LE(e.t, stream.t_end);
    if (i) {
      EXPECT_LE(stream.events[i - 1].t, e.t);
    }
    pos |= e.p > 0;
    neg |= e.p < 0;
  }
  EXPECT_TRUE(pos && neg);
  EXPECT_EQ(stream.t_end, static_cast<std::uint64_t>(vocab[0].duration_ms * 1000));
}

TEST(Events, StaticDotEmitsNothing) {
  GlossTemplate still{1, {{0.5, 0.5}, {0.5, 0.5}}, 50};
  EXPECT_TRUE(emit_events(still, SensorConfig{}).events.empty());
}

TEST(Compose, GlossesAreLaidOutWithGaps) {
  const auto vocab = make_gloss_vocab(3, 5);
  const SensorConfig s;
  const std::vector<std::int64_t> ids{2, 1};
  const auto [stream, labels] = compose_clip(ids, vocab, 100, 5, s);
  EXPECT_EQ(labels, ids);
  const auto d2 = static_cast<std::uint64_t>(vocab[1].duration_ms * 1000);
  const auto d1 = static_cast<std::uint64_t>(vocab[0].duration_ms * 1000);
  EXPECT_EQ(stream.t_end, d2 + 100000 + d1);
  for (const auto& e : stream.events) EXPECT_FALSE(e.t > d2 && e.t < d2 + 100000) << e.t;
  EXPECT_THROW(compose_clip(std::vector<std::int64_t>{1, 2, 3}, vocab, 100, 2, s), std::invalid_argument);
  EXPECT_THROW(compose_clip(std::vector<std::int64_t>{4}, vocab, 100, 5, s), std::invalid_argument);
  EXPECT_THROW(compose_clip(std::vector<std::int64_t>{}, vocab, 100, 5, s), std::invalid_argument);
}

TEST(Words, MappingIsInjectiveOnContentWords) {
  const auto m = make_word_mapping(12, 7, 0.5);
  std::set<std::string> content;
  for (const auto& words : m) {
    ASSERT_GE(words.size(), 1u);
    ASSERT_LE(words.size(), 2u);
    content.insert(words.back());
  }
  EXPECT_EQ(content.size(), 12u);
  EXPECT_EQ(m, make_word_mapping(12, 7, 0.5));
}

TEST(Words, GlossToWordsConcatenates) {
  const WordMapping m{{"car"}, {"the", "doctor"}};
  const std::vector<std::int64_t> g{2, 1, 2};
  EXPECT_EQ(gloss_to_words(g, m), (std::vector<std::string>{"the", "doctor", "car", "the", "doctor"}));
  EXPECT_EQ(mapping_words(m), (std::vector<std::string>{"car", "the", "doctor"}));
  EXPECT_THROW(gloss_to_words(std::vector<std::int64_t>{3}, m), std::invalid_argument);
  EXPECT_EQ(gloss_name(7), "G07");
}

TEST(Corpus, GenerateAndLoadAgree) {
  TempDir dir("synth");
  const auto c = generate_corpus(tiny(), 3, dir.str());
  EXPECT_EQ(c.train.size(), 6u);
  EXPECT_EQ(c.dev.size(), 3u);
  EXPECT_EQ(c.test.size(), 3u);
  const auto l = load_corpus(dir.str());
  EXPECT_EQ(l.seed, 3u);
  EXPECT_EQ(l.gloss_vocab, c.gloss_vocab);
  EXPECT_EQ(l.word_vocab, c.word_vocab);
  EXPECT_EQ(l.mapping, c.mapping);
  for (const char* split : {"train", "dev", "test"}) {
    ASSERT_EQ(l.split(split).size(), c.split(split).size());
    for (std::size_t i = 0; i < l.split(split).size(); ++i) {
      const auto& a = l.split(split)[i];
      const auto& b = c.split(split)[i];
      EXPECT_EQ(a.id, b.id);
      EXPECT_EQ(a.glosses, b.glosses);
      EXPECT_EQ(a.words, b.words);
      EXPECT_FALSE(parse_event_file(testing_util::read_file(dir / a.path)).events.empty());
      EXPECT_GE(a.glosses.size(), 1u);
      EXPECT_LE(a.glosses.size(), 3u);
    }
  }
  EXPECT_THROW(l.split("val"), std::invalid_argument);
}

TEST(Corpus, SameSeedIsByteIdenticalAcrossThreadCounts) {
  TempDir a("synth_a"), b("synth_b"), c("synth_c");
  generate_corpus(tiny(), 9, a.str(), 1);
  generate_corpus(tiny(), 9, b.str(), 3);
  generate_corpus(tiny(), 10, c.str(), 1);
  const auto ta = testing_util::tree_contents(a.str());
  EXPECT_EQ(ta, testing_util::tree_contents(b.str()));
  EXPECT_NE(ta, testing_util::tree_contents(c.str()));
}

TEST(Corpus, MissingOrCorruptManifest) {
  TempDir dir("synth_bad");
  EXPECT_THROW(load_corpus(dir / "nothing"), NotFoundError);
  generate_corpus(tiny(), 1, dir.str());
  testing_util::write_file(dir / "manifest.json", "{not json");
  EXPECT_THROW(load_corpus(dir.str()), FormatError);
  auto j = nlohmann::json::object();
  j["format"] = "something-else";
  testing_util::write_file(dir / "manifest.json", j.dump());
  EXPECT_THROW(load_corpus(dir.str()), FormatError);
}

}  // namespace
}  // namespace evsign::synth
