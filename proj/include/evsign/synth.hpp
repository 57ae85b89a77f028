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

// Synthetic "micro-sign" corpus: each gloss is a bright dot tracing a short
// polyline; a simulated event sensor reports per-pixel log-intensity
// changes. Clips chain several glosses with still pauses in between.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "evsign/event_io.hpp"

namespace evsign::synth {

using Ids = std::vector<std::int64_t>;

struct Point {
  double x = 0, y = 0;  // unit square
  friend bool operator==(const Point&, const Point&) = default;
};

struct GlossTemplate {
  std::int64_t gloss_id = 0;  // 1-based; 0 is reserved for the CTC blank
  std::vector<Point> waypoints;
  double duration_ms = 0;
  friend bool operator==(const GlossTemplate&, const GlossTemplate&) = default;
};

struct SensorConfig {
  std::uint32_t width = 32;
  std::uint32_t height = 32;
  double threshold = 0.25;    // log-intensity contrast per event
  std::uint64_t dt_us = 1000;  // simulation step
  double dot_radius = 1.5;    // pixels
  double background = 0.1;
  double foreground = 1.0;
};

struct CorpusConfig {
  std::size_t n_glosses = 12;
  std::size_t n_clips = 380;
  double train_fraction = 0.79;
  double dev_fraction = 0.105;
  double test_fraction = 0.105;
  std::size_t min_seq = 2;
  std::size_t max_seq = 5;
  double gap_ms = 100;
  double min_duration_ms = 240;
  double max_duration_ms = 400;
  double function_word_prob = 0.5;
  SensorConfig sensor;

  // Throws std::invalid_argument.
  void validate() const;
  // Clip counts per split: dev and test are rounded, train takes the rest.
  std::array<std::size_t, 3> split_sizes() const;
};

nlohmann::json to_json(const CorpusConfig& config);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);

std::vector<GlossTemplate> make_gloss_vocab(std::size_t n_glosses, std::uint64_t seed,
                                            double min_duration_ms = 240, double max_duration_ms = 400);

// Dot position in pixel coordinates at `t_us` into the template.
Point dot_position(const GlossTemplate& tmpl, double t_us, const SensorConfig& sensor);

EventStream emit_events(const GlossTemplate& tmpl, const SensorConfig& sensor);

// Glosses are laid out back to back with `gap_ms` of stillness between them.
std::pair<EventStream, Ids> compose_clip(std::span<const std::int64_t> gloss_ids,
                                         std::span<const GlossTemplate> vocab, double gap_ms,
                                         std::size_t max_seq, const SensorConfig& sensor);

// words[g - 1] lists the one or two words gloss g expands to.
using WordMapping = std::vector<std::vector<std::string>>;

WordMapping make_word_mapping(std::size_t n_glosses, std::uint64_t seed, double function_word_prob);
std::vector<std::string> gloss_to_words(std::span<const std::int64_t> glosses, const WordMapping& mapping);
// All distinct words of a mapping in first-use order.
std::vector<std::string> mapping_words(const WordMapping& mapping);
std::string gloss_name(std::int64_t gloss_id);

struct ClipRecord {
  std::string id;
  std::string path;  // relative to the corpus root
  Ids glosses;
  Ids words;  // ids in the word vocabulary (specials occupy 0..3)
};

struct Corpus {
  std::string root;
  std::uint64_t seed = 0;
  CorpusConfig config;
  std::vector<std::string> gloss_vocab;  // gloss id g -> gloss_vocab[g - 1]
  std::vector<std::string> word_vocab;   // full vocabulary including specials
  WordMapping mapping;
  std::vector<ClipRecord> train, dev, test;

  const std::vector<ClipRecord>& split(const std::string& name) const;
};

// Writes manifest.json, clips/*.events and annotations/<split>.tsv under
// `root`. Output bytes depend only on (config, seed); `threads` does not
// change them.
Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed, const std::string& root,
                       std::size_t threads = 1);

Corpus load_corpus(const std::string& root);

}  // namespace evsign::synth
