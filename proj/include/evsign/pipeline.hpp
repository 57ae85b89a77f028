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

// Configuration, model assembly, losses, optimization, checkpoints and the
// train / evaluate entry points.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evsign/event_io.hpp"
#include "evsign/heads.hpp"
#include "evsign/metrics.hpp"
#include "evsign/nn.hpp"
#include "evsign/sparse_conv.hpp"
#include "evsign/synth.hpp"
#include "evsign/temporal.hpp"
#include "evsign/tensor.hpp"

namespace evsign::pipeline {

using Ids = std::vector<std::int64_t>;

// A checkpoint does not belong to the configured model.
class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Protocol { kS2G, kS2GT };

struct ModelConfig {
  Protocol protocol = Protocol::kS2G;
  std::size_t bins = 5;              // B
  std::size_t segments = 0;          // P; 0 derives P from window_us
  std::uint64_t window_us = 40000;
  std::size_t dim = 64;              // C
  std::size_t heads = 4;
  std::size_t window = 8;            // I
  std::size_t gamma = 4;
  double sigma = 16.0;
  std::size_t ffn_hidden = 256;
  std::vector<std::size_t> backbone_channels{16, 32, 64, 64};
  double site_threshold = 0.0;
  double norm_momentum = 0.1;
  std::size_t decoder_blocks = 4;
  std::size_t max_words = 24;
};

struct TrainConfig {
  double lr0 = 3e-5;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 2;
  std::size_t epochs = 40;
  double lambda_inter = 1.0;
  double lambda_final = 1.0;
  double lambda_ce = 1.0;
  // Stops after this many epochs of the current invocation (0 = run to the
  // end); the schedule still spans `epochs`, so a later resume continues it.
  std::size_t stop_after_epochs = 0;
  bool checked = false;
};

struct PathsConfig {
  std::string corpus = "data/corpus";
  std::string run_dir = "runs/default";
};

struct Config {
  std::uint64_t seed = 7;
  synth::CorpusConfig data;
  ModelConfig model;
  TrainConfig train;
  PathsConfig paths;

  void validate() const;
};

nlohmann::json to_json(const Config& config);
nlohmann::json to_json(const ModelConfig& config);
// Parses and type-checks; `validate` also checks cross-field constraints.
Config config_from_json(const nlohmann::json& j, bool validate = true);
// `key.path=value`; the value is parsed as JSON when possible, else taken as
// a string. Unknown paths are rejected.
void apply_override(nlohmann::json& j, const std::string& assignment);
// Defaults, then the file (if non-empty), then overrides in order.
Config load_config(const std::string& path, const std::vector<std::string>& overrides);

std::string protocol_name(Protocol p);

// SHA-256 over everything that fixes parameter names and shapes.
std::array<std::uint8_t, 32> architecture_hash(const ModelConfig& config, std::size_t gloss_classes,
                                               std::size_t word_vocab);
std::string hex(std::span<const std::uint8_t> bytes);

template <typename T>
struct ModelOutput {
  temporal::GataOutput<T> gata;
  Tensor<T> inter_log_probs;  // on the fused tokens
  Tensor<T> final_log_probs;  // on the gloss-aware tokens
};

template <typename T>
class Model {
  // Declared first: members below are constructed from these.
  ModelConfig config_;
  std::size_t gloss_classes_, word_vocab_;
  nn::Rng init_rng_;

 public:
  Model(const ModelConfig& config, std::size_t gloss_classes, std::size_t word_vocab, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ModelOutput<T> forward(const sparse::SparseTensor<T>& input, bool training, sparse::NormUpdates* updates) const;

  const ModelConfig& config() const { return config_; }
  std::size_t gloss_classes() const { return gloss_classes_; }
  std::size_t word_vocab() const { return word_vocab_; }
  bool has_decoder() const { return decoder.has_value(); }
  std::array<std::uint8_t, 32> hash() const { return architecture_hash(config_, gloss_classes_, word_vocab_); }

  nn::ParamStore<T> store;
  sparse::Backbone<T> backbone;
  temporal::TemporalModel<T> temporal;
  heads::RecognitionHead<T> inter_head;
  heads::RecognitionHead<T> final_head;
  std::optional<heads::TranslationDecoder<T>> decoder;
};

template <typename T>
struct ClipData {
  std::string id;
  sparse::SparseTensor<T> input;
  Ids glosses;
  Ids words;
};

std::size_t segments_for(const ModelConfig& config, const EventStream& stream);
VoxelGrid encode_stream(const ModelConfig& config, const EventStream& stream);

template <typename T>
ClipData<T> load_clip(const ModelConfig& config, const synth::Corpus& corpus, const synth::ClipRecord& record);
template <typename T>
std::vector<ClipData<T>> load_split(const ModelConfig& config, const synth::Corpus& corpus, const std::string& split,
                                    std::size_t threads);

struct LossWeights {
  double inter = 1.0, final = 1.0, ce = 1.0;
};

template <typename T>
struct Losses {
  Tensor<T> l_inter, l_final, l_slr;
  std::optional<Tensor<T>> l_ce, l_slt;
  bool feasible = true;
  ModelOutput<T> output;

  // The objective being trained: L_SLT when present, else L_SLR.
  const Tensor<T>& objective() const { return l_slt ? *l_slt : l_slr; }
};

template <typename T>
Losses<T> forward_s2g(const Model<T>& model, const ClipData<T>& clip, const LossWeights& w, bool training,
                      sparse::NormUpdates* updates);
template <typename T>
Losses<T> forward_s2gt(const Model<T>& model, const ClipData<T>& clip, const LossWeights& w, bool training,
                       sparse::NormUpdates* updates);

struct AdamOptions {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-3;
};

struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::uint64_t step = 0;
};

// Classic Adam with the L2 term added to the gradient. Parameters without a
// gradient entry are treated as having zero loss gradient.
template <typename T>
void adam_step(const std::vector<Tensor<T>>& params, const Gradients<T>& grads, AdamState& state, double lr,
               const AdamOptions& options);

// lr0 * (1 + cos(pi * epoch / total)) / 2
double cosine_lr(double epoch, std::size_t total_epochs, double lr0);

struct TrainingState {
  std::uint64_t epoch = 0;  // epochs completed
  std::uint64_t step = 0;
  double best_dev_wer = 1e300;
  std::string rng_state;
};

// EVCK container.
void save_checkpoint(const std::string& path, const Model<float>& model, const AdamState& adam,
                     const TrainingState& state);
// Throws on a magic/version problem or when the architecture hash differs.
void load_checkpoint(const std::string& path, Model<float>& model, AdamState* adam, TrainingState* state);

struct EvalResult {
  metrics::ScoreReport report;
  std::vector<metrics::ClipRow> rows;
};

template <typename T>
EvalResult evaluate_clips(const Model<T>& model, const std::vector<ClipData<T>>& clips, const synth::Corpus& corpus,
                          const std::string& split);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double dev_wer = 0;
  std::optional<double> dev_bleu1;
  std::size_t skipped = 0;  // clips with an infeasible CTC target
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainSummary {
  std::vector<EpochRecord> epochs;  // the epochs run by this invocation
  double best_dev_wer = 0;
  std::string run_dir;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Writes last.ckpt, best.ckpt, train_report.jsonl and config.json to the
// run directory; resumes from last.ckpt when `resume` is set.
TrainSummary train(const Config& config, bool resume, std::size_t threads, const ProgressFn& progress = {});

// A checkpoint restored against the corpus it was trained on.
struct TrainedModel {
  synth::Corpus corpus;
  std::unique_ptr<Model<float>> model;
};
TrainedModel load_trained(const Config& config, const std::string& checkpoint);

// Writes <run_dir>/eval_<split>.json and hyps_<split>.jsonl.
EvalResult evaluate(const Config& config, const TrainedModel& trained, const std::string& split,
                    std::size_t threads);
EvalResult evaluate(const Config& config, const std::string& checkpoint, const std::string& split,
                    std::size_t threads);

struct FlopsSummary {
  double sparse_macs = 0, dense_macs = 0;
  std::size_t clips = 0;
  double ratio() const { return dense_macs > 0 ? sparse_macs / dense_macs : 0.0; }
};
FlopsSummary flops_report(const Config& config, const std::string& split, std::size_t threads);

// Writes M for one clip as an EVVG container of dims 1 x 1 x L x P.
VoxelGrid mask_dump(const Config& config, const TrainedModel& trained, const std::string& clip_id,
                    const std::string& out_path);

// Worker count: EVSIGN_THREADS when set, else the hardware concurrency.
std::size_t default_threads();

}  // namespace evsign::pipeline
