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

#include "evsign/synth.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <thread>

#include "evsign/heads.hpp"
#include "evsign/nn.hpp"
#include "json_util.hpp"

namespace evsign::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCorpusFormat = "evsign-corpus v1";

const char* const kContentWords[] = {
    "house", "water", "friend", "school", "eat",    "go",     "mother", "father", "rain",  "work",
    "happy", "book",  "city",   "tree",   "drink",  "sleep",  "car",    "money",  "help",  "play",
    "teach", "learn", "sun",    "night",  "family", "doctor", "train",  "sister", "phone", "morning",
};
const char* const kFunctionWords[] = {"the", "a", "to", "is", "my", "we"};

// Stream ids for derive_seed.
constexpr std::uint64_t kVocabStream = 1, kWordStream = 2, kClipStreamBase = 1000;

double path_length(const std::vector<Point>& pts) {
  double len = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  return len;
}

double template_distance(const GlossTemplate& a, const GlossTemplate& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.waypoints.size(); ++i)
    d += std::hypot(a.waypoints[i].x - b.waypoints[i].x, a.waypoints[i].y - b.waypoints[i].y);
  return d / static_cast<double>(a.waypoints.size());
}

std::uint64_t duration_us(const GlossTemplate& tmpl) {
  return static_cast<std::uint64_t>(std::llround(tmpl.duration_ms * 1000.0));
}

void write_json_file(const fs::path& path, const json& j) { write_file(path.string(), j.dump(2) + "\n"); }

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? " " : "") + parts[i];
  return out;
}

}  // namespace

void CorpusConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("corpus config: " + m); };
  if (n_glosses < 2) fail("n_glosses must be at least 2");
  if (n_clips == 0) fail("n_clips must be positive");
  for (double f : {train_fraction, dev_fraction, test_fraction})
    if (!(f >= 0 && f <= 1)) fail("split fractions must lie in [0, 1]");
  if (std::abs(train_fraction + dev_fraction + test_fraction - 1.0) > 1e-6) fail("split fractions must sum to 1");
  if (min_seq < 1 || max_seq < min_seq) fail("need 1 <= min_seq <= max_seq");
  if (!(gap_ms >= 0)) fail("gap_ms must be non-negative");
  if (!(min_duration_ms > 0) || max_duration_ms < min_duration_ms) fail("need 0 < min_duration_ms <= max_duration_ms");
  if (!(function_word_prob >= 0 && function_word_prob <= 1)) fail("function_word_prob must lie in [0, 1]");
  if (sensor.width < 8 || sensor.height < 8) fail("sensor resolution must be at least 8x8");
  if (!(sensor.threshold > 0)) fail("sensor threshold must be positive");
  if (sensor.dt_us == 0) fail("sensor dt_us must be positive");
  if (!(sensor.dot_radius > 0)) fail("dot_radius must be positive");
  if (!(sensor.background > 0) || !(sensor.foreground > 0)) fail("intensities must be positive");
  const auto sizes = split_sizes();
  if (sizes[0] + sizes[1] + sizes[2] != n_clips || sizes[0] == 0) fail("split leaves no training clips");
}

std::array<std::size_t, 3> CorpusConfig::split_sizes() const {
  const auto n = static_cast<double>(n_clips);
  const auto dev = static_cast<std::size_t>(std::llround(n * dev_fraction));
  const auto test = static_cast<std::size_t>(std::llround(n * test_fraction));
  const std::size_t train = dev + test >= n_clips ? 0 : n_clips - dev - test;
  return {train, dev, test};
}

json to_json(const CorpusConfig& c) {
  return json{{"n_glosses", c.n_glosses},
              {"n_clips", c.n_clips},
              {"train_fraction", c.train_fraction},
              {"dev_fraction", c.dev_fraction},
              {"test_fraction", c.test_fraction},
              {"min_seq", c.min_seq},
              {"max_seq", c.max_seq},
              {"gap_ms", c.gap_ms},
              {"min_duration_ms", c.min_duration_ms},
              {"max_duration_ms", c.max_duration_ms},
              {"function_word_prob", c.function_word_prob},
              {"sensor",
               {{"width", c.sensor.width},
                {"height", c.sensor.height},
                {"threshold", c.sensor.threshold},
                {"dt_us", c.sensor.dt_us},
                {"dot_radius", c.sensor.dot_radius},
                {"background", c.sensor.background},
                {"foreground", c.sensor.foreground}}}};
}

CorpusConfig corpus_config_from_json(const json& j) {
  using detail::read_field;
  CorpusConfig c;
  detail::reject_unknown(j,
                         {"n_glosses", "n_clips", "train_fraction", "dev_fraction", "test_fraction", "min_seq",
                          "max_seq", "gap_ms", "min_duration_ms", "max_duration_ms", "function_word_prob", "sensor"},
                         "data");
  read_field(j, "n_glosses", c.n_glosses, "data");
  read_field(j, "n_clips", c.n_clips, "data");
  read_field(j, "train_fraction", c.train_fraction, "data");
  read_field(j, "dev_fraction", c.dev_fraction, "data");
  read_field(j, "test_fraction", c.test_fraction, "data");
  read_field(j, "min_seq", c.min_seq, "data");
  read_field(j, "max_seq", c.max_seq, "data");
  read_field(j, "gap_ms", c.gap_ms, "data");
  read_field(j, "min_duration_ms", c.min_duration_ms, "data");
  read_field(j, "max_duration_ms", c.max_duration_ms, "data");
  read_field(j, "function_word_prob", c.function_word_prob, "data");
  if (const auto it = j.find("sensor"); it != j.end()) {
    const auto& s = *it;
    detail::reject_unknown(s, {"width", "height", "threshold", "dt_us", "dot_radius", "background", "foreground"},
                           "data.sensor");
    read_field(s, "width", c.sensor.width, "data.sensor");
    read_field(s, "height", c.sensor.height, "data.sensor");
    read_field(s, "threshold", c.sensor.threshold, "data.sensor");
    read_field(s, "dt_us", c.sensor.dt_us, "data.sensor");
    read_field(s, "dot_radius", c.sensor.dot_radius, "data.sensor");
    read_field(s, "background", c.sensor.background, "data.sensor");
    read_field(s, "foreground", c.sensor.foreground, "data.sensor");
  }
  return c;
}

std::vector<GlossTemplate> make_gloss_vocab(std::size_t n_glosses, std::uint64_t seed, double min_duration_ms,
                                            double max_duration_ms) {
  if (n_glosses < 2) throw std::invalid_argument("need at least 2 glosses");
  nn::Rng rng(nn::derive_seed(seed, kVocabStream));
  std::vector<GlossTemplate> out;
  for (std::size_t g = 0; g < n_glosses; ++g) {
    GlossTemplate best;
    double best_sep = -1;
    // Rejection sampling for a clearly moving stroke that is far from the
    // strokes already drawn; keeps the most separated candidate otherwise.
    for (int attempt = 0; attempt < 200; ++attempt) {
      GlossTemplate cand;
      cand.gloss_id = static_cast<std::int64_t>(g + 1);
      for (int k = 0; k < 3; ++k) cand.waypoints.push_back({rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)});
      cand.duration_ms = std::round(rng.uniform(min_duration_ms, max_duration_ms));
      if (path_length(cand.waypoints) < 0.5) continue;
      double sep = 1e9;
      for (const auto& prev : out) sep = std::min(sep, template_distance(cand, prev));
      if (sep > best_sep) {
        best_sep = sep;
        best = cand;
      }
      if (sep >= 0.2) break;
    }
    if (best_sep < 0) throw std::runtime_error("could not sample a moving gloss template");
    out.push_back(std::move(best));
  }
  return out;
}

Point dot_position(const GlossTemplate& tmpl, double t_us, const SensorConfig& sensor) {
  const auto& w = tmpl.waypoints;
  const double total_us = tmpl.duration_ms * 1000.0;
  const double frac = std::clamp(t_us / total_us, 0.0, 1.0);
  const double len = path_length(w);
  Point p = w.front();
  if (len > 0) {
    double remaining = frac * len;
    for (std::size_t i = 1; i < w.size(); ++i) {
      const double seg = std::hypot(w[i].x - w[i - 1].x, w[i].y - w[i - 1].y);
      if (remaining <= seg || i + 1 == w.size()) {
        const double a = seg > 0 ? std::min(1.0, remaining / seg) : 0.0;
        p = {w[i - 1].x + a * (w[i].x - w[i - 1].x), w[i - 1].y + a * (w[i].y - w[i - 1].y)};
        break;
      }
      remaining -= seg;
    }
  }
  return {p.x * (sensor.width - 1), p.y * (sensor.height - 1)};
}

EventStream emit_events(const GlossTemplate& tmpl, const SensorConfig& sensor) {
  if (!(tmpl.duration_ms > 0)) throw std::invalid_argument("gloss template duration must be positive");
  if (tmpl.waypoints.size() < 2) throw std::invalid_argument("gloss template needs at least 2 waypoints");
  if (!(sensor.threshold > 0)) throw std::invalid_argument("contrast threshold must be positive");
  if (sensor.width < 8 || sensor.height < 8) throw std::invalid_argument("sensor resolution must be at least 8x8");
  const std::size_t w = sensor.width, h = sensor.height;
  const double lo = std::log(sensor.background), hi = std::log(sensor.foreground);
  const double r2 = sensor.dot_radius * sensor.dot_radius;
  auto render = [&](double t_us, std::vector<double>& img) {
    const Point c = dot_position(tmpl, t_us, sensor);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - c.x, dy = static_cast<double>(y) - c.y;
        img[y * w + x] = dx * dx + dy * dy <= r2 ? hi : lo;
      }
  };

  const std::uint64_t total = duration_us(tmpl);
  std::vector<double> ref(w * h), img(w * h);
  render(0.0, ref);  // the first frame only sets reference levels
  std::vector<Event> events;
  for (std::uint64_t t_prev = 0; t_prev < total;) {
    const std::uint64_t t_cur = std::min(total, t_prev + sensor.dt_us);
    render(static_cast<double>(t_cur), img);
    for (std::size_t i = 0; i < w * h; ++i) {
      const double diff = img[i] - ref[i];
      const auto n = static_cast<std::uint64_t>(std::floor(std::abs(diff) / sensor.threshold + 1e-9));
      if (n == 0) continue;
      const std::int8_t pol = diff > 0 ? 1 : -1;
      for (std::uint64_t k = 1; k <= n; ++k) {
        // Crossing times interpolate linearly across the step.
        const double frac = std::min(1.0, static_cast<double>(k) * sensor.threshold / std::abs(diff));
        const auto t = t_prev + static_cast<std::uint64_t>(std::floor(frac * static_cast<double>(t_cur - t_prev)));
        events.push_back({t, static_cast<std::uint32_t>(i % w), static_cast<std::uint32_t>(i / w), pol});
      }
      ref[i] += static_cast<double>(pol) * static_cast<double>(n) * sensor.threshold;
    }
    t_prev = t_cur;
  }
  auto stream = make_stream(std::move(events), sensor.width, sensor.height);
  stream.t_start = 0;
  stream.t_end = total;
  return stream;
}

std::pair<EventStream, Ids> compose_clip(std::span<const std::int64_t> gloss_ids, std::span<const GlossTemplate> vocab,
                                         double gap_ms, std::size_t max_seq, const SensorConfig& sensor) {
  if (gloss_ids.empty()) throw std::invalid_argument("clip needs at least one gloss");
  if (gloss_ids.size() > max_seq)
    throw std::invalid_argument("clip has " + std::to_string(gloss_ids.size()) + " glosses, max is " +
                                std::to_string(max_seq));
  const auto gap_us = static_cast<std::uint64_t>(std::llround(gap_ms * 1000.0));
  std::vector<Event> events;
  std::uint64_t offset = 0, end = 0;
  for (std::size_t k = 0; k < gloss_ids.size(); ++k) {
    const auto id = gloss_ids[k];
    if (id < 1 || static_cast<std::size_t>(id) > vocab.size())
      throw std::invalid_argument("unknown gloss id " + std::to_string(id));
    const auto& tmpl = vocab[static_cast<std::size_t>(id - 1)];
    for (auto e : emit_events(tmpl, sensor).events) {
      e.t += offset;
      events.push_back(e);
    }
    end = offset + duration_us(tmpl);
    offset = end + gap_us;
  }
  auto stream = make_stream(std::move(events), sensor.width, sensor.height);
  stream.t_start = 0;
  stream.t_end = end;
  return {std::move(stream), Ids(gloss_ids.begin(), gloss_ids.end())};
}

WordMapping make_word_mapping(std::size_t n_glosses, std::uint64_t seed, double function_word_prob) {
  nn::Rng rng(nn::derive_seed(seed, kWordStream));
  std::vector<std::string> pool(std::begin(kContentWords), std::end(kContentWords));
  for (std::size_t i = pool.size(); i < n_glosses; ++i) pool.push_back("word" + std::to_string(i));
  // Seeded Fisher-Yates; the first n_glosses entries become content words.
  for (std::size_t i = pool.size() - 1; i > 0; --i) std::swap(pool[i], pool[rng.below(i + 1)]);
  constexpr std::size_t kFn = std::size(kFunctionWords);
  WordMapping mapping(n_glosses);
  for (std::size_t g = 0; g < n_glosses; ++g) {
    if (rng.uniform() < function_word_prob) mapping[g].push_back(kFunctionWords[rng.below(kFn)]);
    mapping[g].push_back(pool[g]);
  }
  return mapping;
}

std::vector<std::string> gloss_to_words(std::span<const std::int64_t> glosses, const WordMapping& mapping) {
  std::vector<std::string> out;
  for (const auto g : glosses) {
    if (g < 1 || static_cast<std::size_t>(g) > mapping.size())
      throw std::invalid_argument("gloss id " + std::to_string(g) + " has no word mapping");
    const auto& words = mapping[static_cast<std::size_t>(g - 1)];
    out.insert(out.end(), words.begin(), words.end());
  }
  return out;
}

std::vector<std::string> mapping_words(const WordMapping& mapping) {
  std::vector<std::string> out;
  for (const auto& words : mapping)
    for (const auto& w : words)
      if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  return out;
}

std::string gloss_name(std::int64_t gloss_id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "G%02lld", static_cast<long long>(gloss_id));
  return buf;
}

const std::vector<ClipRecord>& Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, dev or test)");
}

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed, const std::string& root, std::size_t threads) {
  config.validate();
  const fs::path base(root);
  std::error_code ec;
  fs::create_directories(base / "clips", ec);
  fs::create_directories(base / "annotations", ec);
  if (ec || !fs::is_directory(base / "clips"))
    throw std::runtime_error("cannot create corpus directory " + root + (ec ? ": " + ec.message() : ""));

  Corpus corpus;
  corpus.root = root;
  corpus.seed = seed;
  corpus.config = config;
  const auto vocab = make_gloss_vocab(config.n_glosses, seed, config.min_duration_ms, config.max_duration_ms);
  for (const auto& t : vocab) corpus.gloss_vocab.push_back(gloss_name(t.gloss_id));
  corpus.mapping = make_word_mapping(config.n_glosses, seed, config.function_word_prob);
  const heads::WordVocab words(mapping_words(corpus.mapping));
  corpus.word_vocab = words.words();

  std::vector<ClipRecord> clips(config.n_clips);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.n_clips && !failed; i = next++) {
      try {
        nn::Rng rng(nn::derive_seed(seed, kClipStreamBase + i));
        const std::size_t len = config.min_seq + rng.below(config.max_seq - config.min_seq + 1);
        Ids ids(len);
        for (auto& g : ids) g = static_cast<std::int64_t>(1 + rng.below(config.n_glosses));
        auto [stream, glosses] = compose_clip(ids, vocab, config.gap_ms, config.max_seq, config.sensor);
        char name[32];
        std::snprintf(name, sizeof name, "clip_%04zu", i);
        ClipRecord rec;
        rec.id = name;
        rec.path = "clips/" + rec.id + ".events";
        rec.glosses = std::move(glosses);
        for (const auto& w : gloss_to_words(rec.glosses, corpus.mapping)) rec.words.push_back(words.id(w));
        write_event_file_path(stream, (base / rec.path).string());
        clips[i] = std::move(rec);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(threads, config.n_clips));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  const auto sizes = config.split_sizes();
  corpus.train.assign(clips.begin(), clips.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  corpus.dev.assign(clips.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                    clips.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  corpus.test.assign(clips.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), clips.end());

  json manifest{{"format", kCorpusFormat},
                {"seed", seed},
                {"config", to_json(config)},
                {"gloss_vocab", corpus.gloss_vocab},
                {"word_vocab", corpus.word_vocab},
                {"mapping", corpus.mapping}};
  json tmpl_json = json::array();
  for (const auto& t : vocab) {
    json pts = json::array();
    for (const auto& p : t.waypoints) pts.push_back({p.x, p.y});
    tmpl_json.push_back({{"gloss", t.gloss_id}, {"waypoints", pts}, {"duration_ms", t.duration_ms}});
  }
  manifest["templates"] = tmpl_json;
  for (const char* split : {"train", "dev", "test"}) {
    json arr = json::array();
    std::string tsv;
    for (const auto& rec : corpus.split(split)) {
      arr.push_back({{"id", rec.id}, {"path", rec.path}, {"glosses", rec.glosses}, {"words", rec.words}});
      std::vector<std::string> g, w;
      for (auto id : rec.glosses) g.push_back(corpus.gloss_vocab[static_cast<std::size_t>(id - 1)]);
      for (auto id : rec.words) w.push_back(corpus.word_vocab[static_cast<std::size_t>(id)]);
      tsv += rec.id + "\t" + join(g) + "\t" + join(w) + "\n";
    }
    manifest["splits"][split] = arr;
    write_file((base / "annotations" / (std::string(split) + ".tsv")).string(), tsv);
  }
  write_json_file(base / "manifest.json", manifest);
  return corpus;
}

Corpus load_corpus(const std::string& root) {
  const fs::path path = fs::path(root) / "manifest.json";
  if (!fs::exists(path))
    throw NotFoundError("no corpus at " + root + " (manifest.json missing); run `evsign synth` first");
  json m;
  try {
    m = json::parse(read_file(path.string()));
  } catch (const json::exception& e) {
    throw FormatError("corrupt manifest " + path.string() + ": " + e.what());
  }
  if (m.value("format", "") != kCorpusFormat) throw FormatError("unsupported manifest format in " + path.string());
  Corpus c;
  c.root = root;
  c.seed = m.at("seed").get<std::uint64_t>();
  c.config = corpus_config_from_json(m.at("config"));
  c.gloss_vocab = m.at("gloss_vocab").get<std::vector<std::string>>();
  c.word_vocab = m.at("word_vocab").get<std::vector<std::string>>();
  c.mapping = m.at("mapping").get<WordMapping>();
  for (const char* split : {"train", "dev", "test"}) {
    auto& dst = split == std::string("train") ? c.train : split == std::string("dev") ? c.dev : c.test;
    for (const auto& r : m.at("splits").at(split)) {
      ClipRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.path = r.at("path").get<std::string>();
      rec.glosses = r.at("glosses").get<Ids>();
      rec.words = r.at("words").get<Ids>();
      for (auto g : rec.glosses)
        if (g < 1 || static_cast<std::size_t>(g) > c.gloss_vocab.size())
          throw FormatError("clip " + rec.id + " has gloss id outside the vocabulary");
      for (auto w : rec.words)
        if (w < 0 || static_cast<std::size_t>(w) >= c.word_vocab.size())
          throw FormatError("clip " + rec.id + " has word id outside the vocabulary");
      dst.push_back(std::move(rec));
    }
  }
  return c;
}

}  // namespace evsign::synth
