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

#include <openssl/sha.h>

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "evsign/pipeline.hpp"
#include "json_util.hpp"

namespace evsign::pipeline {

using nlohmann::json;
using detail::read_field;

std::string protocol_name(Protocol p) { return p == Protocol::kS2G ? "s2g" : "s2gt"; }

void Config::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  data.validate();
  const auto& m = model;
  if (m.bins < 1) fail("model.bins must be at least 1");
  if (m.segments == 0 && m.window_us == 0) fail("model.window_us must be positive when model.segments is 0");
  if (m.backbone_channels.empty()) fail("model.backbone_channels must not be empty");
  for (auto c : m.backbone_channels)
    if (c == 0) fail("model.backbone_channels entries must be positive");
  if (m.backbone_channels.back() != m.dim) fail("the last backbone channel count must equal model.dim");
  temporal::TemporalConfig{m.dim, m.heads, m.window, m.gamma, m.sigma, m.ffn_hidden}.validate();
  if (!(m.site_threshold >= 0)) fail("model.site_threshold must be non-negative");
  if (!(m.norm_momentum > 0 && m.norm_momentum <= 1)) fail("model.norm_momentum must lie in (0, 1]");
  if (m.decoder_blocks < 1) fail("model.decoder_blocks must be at least 1");
  if (m.max_words < 1) fail("model.max_words must be at least 1");
  const auto& t = train;
  if (!(t.lr0 > 0)) fail("train.lr0 must be positive");
  if (!(t.weight_decay >= 0)) fail("train.weight_decay must be non-negative");
  if (!(t.beta1 >= 0 && t.beta1 < 1) || !(t.beta2 >= 0 && t.beta2 < 1)) fail("adam betas must lie in [0, 1)");
  if (!(t.adam_eps > 0)) fail("train.adam_eps must be positive");
  if (t.batch_size < 1) fail("train.batch_size must be at least 1");
  if (t.epochs < 1) fail("train.epochs must be at least 1");
  for (double l : {t.lambda_inter, t.lambda_final, t.lambda_ce})
    if (!(l >= 0) || !std::isfinite(l)) fail("loss weights must be finite and non-negative");
  if (paths.corpus.empty() || paths.run_dir.empty()) fail("paths.corpus and paths.run_dir must be set");
}

json to_json(const ModelConfig& m) {
  return json{{"protocol", protocol_name(m.protocol)},
              {"bins", m.bins},
              {"segments", m.segments},
              {"window_us", m.window_us},
              {"dim", m.dim},
              {"heads", m.heads},
              {"window", m.window},
              {"gamma", m.gamma},
              {"sigma", m.sigma},
              {"ffn_hidden", m.ffn_hidden},
              {"backbone_channels", m.backbone_channels},
              {"site_threshold", m.site_threshold},
              {"norm_momentum", m.norm_momentum},
              {"decoder_blocks", m.decoder_blocks},
              {"max_words", m.max_words}};
}

json to_json(const Config& c) {
  const auto& t = c.train;
  return json{{"seed", c.seed},
              {"data", synth::to_json(c.data)},
              {"model", to_json(c.model)},
              {"train",
               {{"lr0", t.lr0},
                {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"lambda_inter", t.lambda_inter},
                {"lambda_final", t.lambda_final},
                {"lambda_ce", t.lambda_ce},
                {"stop_after_epochs", t.stop_after_epochs},
                {"checked", t.checked}}},
              {"paths", {{"corpus", c.paths.corpus}, {"run_dir", c.paths.run_dir}}}};
}

Config config_from_json(const json& j, bool validate) {
  Config c;
  detail::reject_unknown(j, {"seed", "data", "model", "train", "paths"}, "config");
  read_field(j, "seed", c.seed, "config");
  if (j.contains("data")) c.data = synth::corpus_config_from_json(j["data"]);
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m,
                           {"protocol", "bins", "segments", "window_us", "dim", "heads", "window", "gamma", "sigma",
                            "ffn_hidden", "backbone_channels", "site_threshold", "norm_momentum", "decoder_blocks",
                            "max_words"},
                           "model");
    auto& o = c.model;
    std::string protocol = protocol_name(o.protocol);
    read_field(m, "protocol", protocol, "model");
    if (protocol == "s2g") o.protocol = Protocol::kS2G;
    else if (protocol == "s2gt") o.protocol = Protocol::kS2GT;
    else throw std::invalid_argument("model.protocol: expected \"s2g\" or \"s2gt\", got \"" + protocol + "\"");
    read_field(m, "bins", o.bins, "model");
    read_field(m, "segments", o.segments, "model");
    read_field(m, "window_us", o.window_us, "model");
    read_field(m, "dim", o.dim, "model");
    read_field(m, "heads", o.heads, "model");
    read_field(m, "window", o.window, "model");
    read_field(m, "gamma", o.gamma, "model");
    read_field(m, "sigma", o.sigma, "model");
    read_field(m, "ffn_hidden", o.ffn_hidden, "model");
    if (m.contains("backbone_channels")) {
      const auto& arr = m["backbone_channels"];
      if (!arr.is_array()) throw std::invalid_argument("model.backbone_channels: expected an array");
      o.backbone_channels.clear();
      for (const auto& v : arr) {
        if (!v.is_number_unsigned())
          throw std::invalid_argument("model.backbone_channels: expected non-negative integers");
        o.backbone_channels.push_back(v.get<std::size_t>());
      }
    }
    read_field(m, "site_threshold", o.site_threshold, "model");
    read_field(m, "norm_momentum", o.norm_momentum, "model");
    read_field(m, "decoder_blocks", o.decoder_blocks, "model");
    read_field(m, "max_words", o.max_words, "model");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t,
                           {"lr0", "weight_decay", "beta1", "beta2", "adam_eps", "batch_size", "epochs",
                            "lambda_inter", "lambda_final", "lambda_ce", "stop_after_epochs", "checked"},
                           "train");
    auto& o = c.train;
    read_field(t, "lr0", o.lr0, "train");
    read_field(t, "weight_decay", o.weight_decay, "train");
    read_field(t, "beta1", o.beta1, "train");
    read_field(t, "beta2", o.beta2, "train");
    read_field(t, "adam_eps", o.adam_eps, "train");
    read_field(t, "batch_size", o.batch_size, "train");
    read_field(t, "epochs", o.epochs, "train");
    read_field(t, "lambda_inter", o.lambda_inter, "train");
    read_field(t, "lambda_final", o.lambda_final, "train");
    read_field(t, "lambda_ce", o.lambda_ce, "train");
    read_field(t, "stop_after_epochs", o.stop_after_epochs, "train");
    read_field(t, "checked", o.checked, "train");
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::reject_unknown(p, {"corpus", "run_dir"}, "paths");
    read_field(p, "corpus", c.paths.corpus, "paths");
    read_field(p, "run_dir", c.paths.run_dir, "paths");
  }
  if (validate) c.validate();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' is not of the form key.path=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (key.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty key segment");
    if (!node->is_object() || !node->contains(key))
      throw std::invalid_argument("override '" + assignment + "': unknown key '" + path.substr(0, dot) + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = value;
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j = to_json(Config{});
  if (!path.empty()) {
    json file;
    try {
      file = json::parse(read_file(path));
    } catch (const json::exception& e) {
      throw std::invalid_argument("config file " + path + " is not valid JSON: " + e.what());
    }
    // Validate the file on its own so unknown keys are reported against it,
    // then layer it over the defaults.
    config_from_json(file, false);
    j.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

std::array<std::uint8_t, 32> architecture_hash(const ModelConfig& config, std::size_t gloss_classes,
                                               std::size_t word_vocab) {
  json j = to_json(config);
  // These only affect how inputs are segmented, not parameter shapes, but a
  // checkpoint is only meaningful with the input statistics it was trained on.
  j["gloss_classes"] = gloss_classes;
  j["word_vocab"] = word_vocab;
  const std::string text = j.dump();
  std::array<std::uint8_t, 32> out{};
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), out.data());
  return out;
}

std::string hex(std::span<const std::uint8_t> bytes) {
  std::string out;
  char buf[3];
  for (auto b : bytes) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    out += buf;
  }
  return out;
}

}  // namespace evsign::pipeline
