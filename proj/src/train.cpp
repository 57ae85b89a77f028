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

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "binary_io.hpp"
#include "evsign/pipeline.hpp"

namespace evsign::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kCkptMagic[4] = {'E', 'V', 'C', 'K'};
constexpr std::uint16_t kCkptVersion = 1;

void put_blob(std::string& out, const std::string& name, const Shape& shape, std::span<const float> data) {
  if (name.size() > 0xFFFF) throw std::invalid_argument("blob name too long: " + name);
  detail::put_le(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  detail::put_le(out, static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) detail::put_le(out, static_cast<std::uint32_t>(d));
  for (float v : data) detail::put_f32(out, v);
}

struct Blob {
  Shape shape;
  std::vector<float> data;
};

std::map<std::string, Blob> read_blobs(detail::ByteReader& in) {
  std::map<std::string, Blob> out;
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name(in.take(name_len));
    Blob b;
    const auto rank = in.get<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      b.shape.push_back(in.get<std::uint32_t>());
      n *= b.shape.back();
      if (n > in.remaining()) throw FormatError("dimension overflow in blob " + name);
    }
    b.data.resize(n);
    for (auto& v : b.data) v = in.get_f32();
    if (!out.emplace(std::move(name), std::move(b)).second) throw FormatError("duplicate blob name in checkpoint");
  }
  return out;
}

// Parameters, then buffers, in store order.
std::vector<std::pair<std::string, Tensor<float>>> named_state(const Model<float>& model) {
  auto all = model.store.params();
  all.insert(all.end(), model.store.buffers().begin(), model.store.buffers().end());
  return all;
}

void write_text(const fs::path& path, const std::string& text) { write_file(path.string(), text); }

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

metrics::Tokens gloss_tokens(const synth::Corpus& corpus, const Ids& ids) {
  metrics::Tokens out;
  for (auto g : ids) out.push_back(corpus.gloss_vocab.at(static_cast<std::size_t>(g - 1)));
  return out;
}

metrics::Tokens word_tokens(const synth::Corpus& corpus, const Ids& ids) {
  metrics::Tokens out;
  for (auto w : ids) out.push_back(corpus.word_vocab.at(static_cast<std::size_t>(w)));
  return out;
}

synth::Corpus open_corpus(const Config& config) {
  if (!fs::exists(fs::path(config.paths.corpus) / "manifest.json"))
    throw NotFoundError("no corpus at '" + config.paths.corpus +
                             "'; generate one with `evsign synth --out " + config.paths.corpus + "`");
  return synth::load_corpus(config.paths.corpus);
}

std::size_t gloss_classes(const synth::Corpus& corpus) { return corpus.gloss_vocab.size() + 1; }

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model, const AdamState& adam,
                     const TrainingState& state) {
  std::string out(kCkptMagic, 4);
  detail::put_le(out, kCkptVersion);
  const auto h = model.hash();
  out.append(reinterpret_cast<const char*>(h.data()), h.size());
  const auto named = named_state(model);
  detail::put_le(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) put_blob(out, name, t.shape(), t.data());
  const auto& params = model.store.params();
  detail::put_le(out, static_cast<std::uint32_t>(adam.m.empty() ? 0 : 2 * params.size()));
  if (!adam.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_blob(out, "adam.m:" + params[i].first, params[i].second.shape(), adam.m[i]);
      put_blob(out, "adam.v:" + params[i].first, params[i].second.shape(), adam.v[i]);
    }
  }
  detail::put_le(out, adam.step);
  detail::put_le(out, state.epoch);
  detail::put_le(out, state.step);
  detail::put_le(out, std::bit_cast<std::uint64_t>(state.best_dev_wer));
  detail::put_le(out, static_cast<std::uint32_t>(state.rng_state.size()));
  out += state.rng_state;
  // Write-then-rename so an interrupted save never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  write_file(tmp, out);
  fs::rename(tmp, path);
}

void load_checkpoint(const std::string& path, Model<float>& model, AdamState* adam, TrainingState* state) {
  if (!fs::exists(path)) throw NotFoundError("checkpoint not found: " + path);
  const std::string bytes = read_file(path);
  detail::ByteReader in(bytes);
  if (in.take(4) != std::string_view(kCkptMagic, 4)) throw FormatError("bad magic in " + path);
  if (const auto v = in.get<std::uint16_t>(); v != kCkptVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  const auto stored = in.take(32);
  const auto expected = model.hash();
  if (stored != std::string_view(reinterpret_cast<const char*>(expected.data()), expected.size()))
    throw MismatchError("checkpoint " + path + " was written for a different model configuration (hash " +
                             hex(std::span(reinterpret_cast<const std::uint8_t*>(stored.data()), 32)) + ", expected " +
                             hex(expected) + ")");
  const auto blobs = read_blobs(in);
  const auto opt = read_blobs(in);
  const auto adam_step_count = in.get<std::uint64_t>();
  TrainingState st;
  st.epoch = in.get<std::uint64_t>();
  st.step = in.get<std::uint64_t>();
  st.best_dev_wer = std::bit_cast<double>(in.get<std::uint64_t>());
  st.rng_state = std::string(in.take(in.get<std::uint32_t>()));
  if (in.remaining() != 0) throw FormatError("trailing bytes in " + path);

  for (const auto& [name, t] : named_state(model)) {
    const auto it = blobs.find(name);
    if (it == blobs.end()) throw FormatError("checkpoint lacks tensor " + name);
    if (it->second.shape != t.shape())
      throw FormatError("tensor " + name + " has shape " + shape_str(it->second.shape) + ", expected " +
                        shape_str(t.shape()));
    t.assign(it->second.data);
  }
  if (blobs.size() != named_state(model).size()) throw FormatError("checkpoint holds unexpected tensors");
  if (adam) {
    *adam = {};
    if (!opt.empty()) {
      for (const auto& [name, t] : model.store.params()) {
        const auto m = opt.find("adam.m:" + name), v = opt.find("adam.v:" + name);
        if (m == opt.end() || v == opt.end()) throw FormatError("checkpoint lacks optimizer state for " + name);
        adam->m.push_back(m->second.data);
        adam->v.push_back(v->second.data);
      }
    }
    adam->step = adam_step_count;
  }
  if (state) *state = st;
}

template <typename T>
EvalResult evaluate_clips(const Model<T>& model, const std::vector<ClipData<T>>& clips, const synth::Corpus& corpus,
                          const std::string& split) {
  NoGradGuard guard;
  EvalResult res;
  for (const auto& clip : clips) {
    const auto out = model.forward(clip.input, false, nullptr);
    metrics::ClipRow row;
    row.clip_id = clip.id;
    row.gloss_ref = gloss_tokens(corpus, clip.glosses);
    row.gloss_hyp = gloss_tokens(corpus, heads::ctc_greedy_decode(out.final_log_probs));
    if (model.decoder) {
      row.text_ref = word_tokens(corpus, clip.words);
      row.text_hyp = word_tokens(corpus, model.decoder->generate(out.gata.out, model.config().max_words));
    }
    res.rows.push_back(std::move(row));
  }
  res.report = metrics::aggregate(split, res.rows);
  return res;
}

json to_json(const EpochRecord& r) {
  json j{{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"dev_wer", r.dev_wer}};
  if (r.dev_bleu1) j["dev_bleu1"] = *r.dev_bleu1;
  if (r.skipped) j["skipped"] = r.skipped;
  return j;
}

TrainSummary train(const Config& config, bool resume, std::size_t threads, const ProgressFn& progress) {
  config.validate();
  set_checked_mode(config.train.checked);
  const auto corpus = open_corpus(config);
  Model<float> model(config.model, gloss_classes(corpus), corpus.word_vocab.size(), config.seed);
  const auto train_clips = load_split<float>(config.model, corpus, "train", threads);
  const auto dev_clips = load_split<float>(config.model, corpus, "dev", threads);
  if (train_clips.empty()) throw std::runtime_error("corpus has no training clips");
  if (dev_clips.empty()) throw std::runtime_error("corpus has no dev clips");

  const fs::path run(config.paths.run_dir);
  std::error_code ec;
  fs::create_directories(run, ec);
  if (!fs::is_directory(run)) throw std::runtime_error("cannot create run directory " + run.string());
  write_text(run / "config.json", to_json(config).dump(2) + "\n");
  const auto last_path = (run / "last.ckpt").string(), best_path = (run / "best.ckpt").string();
  const auto report_path = run / "train_report.jsonl";

  AdamState adam;
  TrainingState st;
  nn::Rng rng(nn::derive_seed(config.seed, 3));
  std::string report;
  if (resume && fs::exists(last_path)) {
    load_checkpoint(last_path, model, &adam, &st);
    std::istringstream(st.rng_state) >> rng.engine();
    for (const auto& line : read_lines(report_path))
      if (json::parse(line).at("epoch").get<std::uint64_t>() <= st.epoch) report += line + "\n";
  }
  write_text(report_path, report);

  const LossWeights weights{config.train.lambda_inter, config.train.lambda_final, config.train.lambda_ce};
  const AdamOptions opts{config.train.beta1, config.train.beta2, config.train.adam_eps, config.train.weight_decay};
  const bool s2gt = config.model.protocol == Protocol::kS2GT;
  const auto params = model.store.tensors();
  const std::size_t bs = config.train.batch_size;

  struct ClipStep {
    Gradients<float> grads;
    sparse::NormUpdates updates;
    double loss = 0;
    bool feasible = false;
  };
  auto run_clip = [&](const ClipData<float>& clip, ClipStep& out) {
    auto losses = s2gt ? forward_s2gt(model, clip, weights, true, &out.updates)
                       : forward_s2g(model, clip, weights, true, &out.updates);
    out.feasible = losses.feasible;
    if (!out.feasible) return;
    out.loss = static_cast<double>(losses.objective().item());
    out.grads = backward(losses.objective());
  };

  TrainSummary summary;
  summary.run_dir = run.string();
  std::size_t ran = 0;
  for (std::uint64_t epoch = st.epoch; epoch < config.train.epochs; ++epoch) {
    if (config.train.stop_after_epochs && ran == config.train.stop_after_epochs) break;
    const double lr = cosine_lr(static_cast<double>(epoch), config.train.epochs, config.train.lr0);
    std::vector<std::size_t> order(train_clips.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    double loss_sum = 0;
    std::size_t feasible = 0, skipped = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t n = std::min(bs, order.size() - b);
      std::vector<ClipStep> steps(n);
      std::vector<std::exception_ptr> errors(n);
      auto job = [&](std::size_t k) {
        try {
          run_clip(train_clips[order[b + k]], steps[k]);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      };
      if (threads > 1 && n > 1) {
        std::vector<std::thread> pool;
        for (std::size_t k = 1; k < n; ++k) pool.emplace_back(job, k);
        job(0);
        for (auto& t : pool) t.join();
      } else {
        for (std::size_t k = 0; k < n; ++k) job(k);
      }
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

      // Merge in clip order so the result does not depend on scheduling.
      Gradients<float> merged;
      std::size_t used = 0;
      for (auto& s : steps) {
        if (!s.feasible) {
          ++skipped;
          continue;
        }
        merged.merge(s.grads);
        loss_sum += s.loss;
        ++used;
      }
      if (used == 0) continue;
      feasible += used;
      merged.scale(1.0f / static_cast<float>(n));
      adam_step(params, merged, adam, lr, opts);
      for (const auto& s : steps)
        if (s.feasible) model.backbone.apply_updates(s.updates);
      ++st.step;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = feasible ? loss_sum / static_cast<double>(feasible) : 0.0;
    rec.skipped = skipped;
    const auto dev = evaluate_clips(model, dev_clips, corpus, "dev");
    rec.dev_wer = dev.report.wer.wer;
    if (s2gt) rec.dev_bleu1 = dev.report.bleu[0];

    st.epoch = epoch + 1;
    std::ostringstream rng_out;
    rng_out << rng.engine();
    st.rng_state = rng_out.str();
    if (rec.dev_wer < st.best_dev_wer) {
      st.best_dev_wer = rec.dev_wer;
      save_checkpoint(best_path, model, adam, st);
    }
    save_checkpoint(last_path, model, adam, st);
    report += to_json(rec).dump() + "\n";
    write_text(report_path, report);
    summary.epochs.push_back(rec);
    if (progress) progress(rec);
    ++ran;
  }
  summary.best_dev_wer = st.best_dev_wer;
  return summary;
}

TrainedModel load_trained(const Config& config, const std::string& checkpoint) {
  config.validate();
  TrainedModel t;
  t.corpus = open_corpus(config);
  t.model = std::make_unique<Model<float>>(config.model, gloss_classes(t.corpus), t.corpus.word_vocab.size(),
                                          config.seed);
  load_checkpoint(checkpoint, *t.model, nullptr, nullptr);
  return t;
}

EvalResult evaluate(const Config& config, const std::string& checkpoint, const std::string& split,
                    std::size_t threads) {
  return evaluate(config, load_trained(config, checkpoint), split, threads);
}

EvalResult evaluate(const Config& config, const TrainedModel& trained, const std::string& split,
                    std::size_t threads) {
  const auto& corpus = trained.corpus;
  const auto clips = load_split<float>(config.model, corpus, split, threads);
  if (clips.empty()) throw std::runtime_error("split '" + split + "' has no clips");
  auto res = evaluate_clips(*trained.model, clips, corpus, split);

  const fs::path run(config.paths.run_dir);
  fs::create_directories(run);
  write_text(run / ("eval_" + split + ".json"), metrics::to_json(res.report).dump(2) + "\n");
  std::string hyps;
  for (const auto& row : res.rows) hyps += metrics::to_json(row).dump() + "\n";
  write_text(run / ("hyps_" + split + ".jsonl"), hyps);
  return res;
}

FlopsSummary flops_report(const Config& config, const std::string& split, std::size_t threads) {
  config.validate();
  const auto corpus = open_corpus(config);
  // MAC counts depend only on the active sites, so untrained weights suffice.
  Model<float> model(config.model, gloss_classes(corpus), corpus.word_vocab.size(), config.seed);
  const auto clips = load_split<float>(config.model, corpus, split, threads);
  FlopsSummary s;
  for (const auto& clip : clips) {
    const auto f = model.backbone.flops(clip.input.layout);
    s.sparse_macs += f.sparse_macs;
    s.dense_macs += f.dense_macs;
    ++s.clips;
  }
  return s;
}

VoxelGrid mask_dump(const Config& config, const TrainedModel& trained, const std::string& clip_id,
                    const std::string& out_path) {
  const auto& corpus = trained.corpus;
  const auto& model = *trained.model;
  const synth::ClipRecord* record = nullptr;
  for (const char* split : {"train", "dev", "test"})
    for (const auto& r : corpus.split(split))
      if (r.id == clip_id) record = &r;
  if (!record) throw NotFoundError("clip '" + clip_id + "' is not in the corpus");
  const auto clip = load_clip<float>(config.model, corpus, *record);
  NoGradGuard guard;
  const auto out = model.forward(clip.input, false, nullptr);
  const auto& m = out.gata.mask;
  VoxelGrid grid;
  grid.segments = 1;
  grid.bins = 1;
  grid.height = m.dim(0);
  grid.width = m.dim(1);
  grid.data.assign(m.data().begin(), m.data().end());
  if (!out_path.empty()) write_file(out_path, write_voxel(grid));
  return grid;
}

template EvalResult evaluate_clips(const Model<float>&, const std::vector<ClipData<float>>&, const synth::Corpus&,
                                   const std::string&);
template EvalResult evaluate_clips(const Model<double>&, const std::vector<ClipData<double>>&, const synth::Corpus&,
                                   const std::string&);

}  // namespace evsign::pipeline
