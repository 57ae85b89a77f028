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

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "evsign/pipeline.hpp"
#include "test_util.hpp"

namespace evsign::pipeline {
namespace {

using nlohmann::json;
using testing_util::read_file;
using testing_util::TempDir;

Config tiny_config(const TempDir& dir) {
  Config c;
  c.seed = 5;
  c.data.n_glosses = 4;
  c.data.n_clips = 16;
  c.data.train_fraction = 0.5;
  c.data.dev_fraction = 0.25;
  c.data.test_fraction = 0.25;
  c.data.max_seq = 3;
  c.data.sensor.width = 16;
  c.data.sensor.height = 16;
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.window = 4;
  c.model.ffn_hidden = 32;
  c.model.backbone_channels = {8, 16};
  c.model.decoder_blocks = 1;
  c.model.max_words = 8;
  c.train.lr0 = 1e-3;
  c.train.epochs = 4;
  c.paths.corpus = dir / "corpus";
  c.paths.run_dir = dir / "run";
  return c;
}

// Generates the tiny corpus once for the whole suite.
class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("pipeline");
    const auto c = tiny_config(*dir_);
    synth::generate_corpus(c.data, c.seed, c.paths.corpus);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  Config config(const std::string& run) const {
    auto c = tiny_config(*dir_);
    c.paths.run_dir = *dir_ / run;
    return c;
  }
  static TempDir* dir_;
};
TempDir* PipelineTest::dir_ = nullptr;

TEST(ConfigTest, DefaultsAreValidAndRoundTrip) {
  Config c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.train.lr0, 3e-5);
  EXPECT_EQ(c.model.sigma, 16.0);
  EXPECT_EQ(c.model.bins, 5u);
  EXPECT_EQ(c.model.gamma, 4u);
  EXPECT_EQ(to_json(config_from_json(to_json(c))), to_json(c));
}

TEST(ConfigTest, OverridesUseDottedPaths) {
  auto j = to_json(Config{});
  apply_override(j, "train.lr0=0.001");
  apply_override(j, "model.protocol=s2gt");
  apply_override(j, "model.backbone_channels=[8,64]");
  const auto c = config_from_json(j);
  EXPECT_EQ(c.train.lr0, 1e-3);
  EXPECT_EQ(c.model.protocol, Protocol::kS2GT);
  EXPECT_EQ(c.model.backbone_channels, (std::vector<std::size_t>{8, 64}));
  EXPECT_THROW(apply_override(j, "train.nope=1"), std::invalid_argument);
  EXPECT_THROW(apply_override(j, "no_equals_sign"), std::invalid_argument);
}

TEST(ConfigTest, ValidationRejectsBadValues) {
  Config c;
  c.model.backbone_channels = {16, 32};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.train.lr0 = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.model.gamma = 2;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ConfigTest, LoadFromFileLayersOverDefaults) {
  TempDir dir("cfg");
  testing_util::write_file(dir / "c.json", R"({"seed": 11, "train": {"epochs": 3}})");
  const auto c = load_config(dir / "c.json", {"train.epochs=5"});
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.train.epochs, 5u);
  EXPECT_EQ(c.model.dim, 64u);
  testing_util::write_file(dir / "bad.json", "{");
  EXPECT_THROW(load_config(dir / "bad.json", {}), std::invalid_argument);  // a usage problem, not a data format one
}

TEST(ConfigTest, ArchitectureHashTracksShape) {
  ModelConfig a, b;
  b.dim = 32;
  EXPECT_EQ(architecture_hash(a, 13, 30), architecture_hash(a, 13, 30));
  EXPECT_NE(architecture_hash(a, 13, 30), architecture_hash(b, 13, 30));
  EXPECT_NE(architecture_hash(a, 13, 30), architecture_hash(a, 14, 30));
  EXPECT_EQ(hex(std::vector<std::uint8_t>{0x0f, 0xa0}), "0fa0");
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 40, 1e-3), 1e-3);
  EXPECT_NEAR(cosine_lr(20, 40, 1e-3), 5e-4, 1e-15);
  EXPECT_NEAR(cosine_lr(40, 40, 1e-3), 0.0, 1e-15);
  EXPECT_NEAR(cosine_lr(10, 40, 1.0), 0.5 * (1 + std::cos(std::numbers::pi / 4)), 1e-15);
  EXPECT_THROW(cosine_lr(41, 40, 1.0), std::invalid_argument);
}

TEST(Optimizer, FirstAdamStepMovesByLearningRate) {
  const auto p = Tensor<double>::parameter({3}, {1.0, -2.0, 0.5});
  const auto g = backward(sum(mul(p, Tensor<double>::from({3}, {4.0, -0.25, 0.0}))));
  AdamState st;
  AdamOptions o;
  o.weight_decay = 0;
  adam_step<double>({p}, g, st, 0.1, o);
  // m_hat / sqrt(v_hat) = g / |g| on the first step
  EXPECT_NEAR(p.at(0), 0.9, 1e-6);
  EXPECT_NEAR(p.at(1), -1.9, 1e-6);
  EXPECT_EQ(p.at(2), 0.5);
  EXPECT_EQ(st.step, 1u);
}

TEST(Optimizer, WeightDecayShrinksWithoutGradient) {
  const auto p = Tensor<double>::parameter({1}, {2.0});
  Gradients<double> none;
  AdamState st;
  AdamOptions o;
  o.weight_decay = 0.1;
  adam_step<double>({p}, none, st, 0.01, o);
  EXPECT_NEAR(p.at(0), 1.99, 1e-6);
}

TEST_F(PipelineTest, EncodingFollowsWindow) {
  const auto c = config("enc");
  const auto corpus = synth::load_corpus(c.paths.corpus);
  const auto& rec = corpus.train.front();
  const auto stream = parse_event_file(read_file(c.paths.corpus + "/" + rec.path));
  const auto grid = encode_stream(c.model, stream);
  EXPECT_EQ(grid.segments, segments_for(c.model, stream));
  EXPECT_EQ(grid.bins, 5u);
  EXPECT_EQ(grid.height, 16u);
  auto fixed = c.model;
  fixed.segments = 7;
  EXPECT_EQ(encode_stream(fixed, stream).segments, 7u);
}

TEST_F(PipelineTest, LossesCombineWithWeights) {
  const auto c = config("loss");
  const auto corpus = synth::load_corpus(c.paths.corpus);
  auto mc = c.model;
  mc.protocol = Protocol::kS2GT;
  const Model<double> model(mc, corpus.gloss_vocab.size() + 1, corpus.word_vocab.size(), 3);
  const auto clip = load_clip<double>(mc, corpus, corpus.train.front());
  const LossWeights w{0.5, 2.0, 3.0};
  const auto l = forward_s2gt(model, clip, w, false, nullptr);
  ASSERT_TRUE(l.feasible);
  EXPECT_NEAR(l.l_slr.item(), 0.5 * l.l_inter.item() + 2.0 * l.l_final.item(), 1e-9);
  EXPECT_NEAR(l.objective().item(), l.l_slr.item() + 3.0 * l.l_ce->item(), 1e-9);
  const auto out = l.output;
  EXPECT_EQ(out.final_log_probs.dim(1), corpus.gloss_vocab.size() + 1);
  EXPECT_EQ(out.gata.mask.dim(0), out.final_log_probs.dim(0));
}

TEST_F(PipelineTest, S2gModelRejectsTranslationForward) {
  const auto c = config("s2g_only");
  const auto corpus = synth::load_corpus(c.paths.corpus);
  const Model<double> model(c.model, corpus.gloss_vocab.size() + 1, corpus.word_vocab.size(), 3);
  EXPECT_FALSE(model.has_decoder());
  const auto clip = load_clip<double>(c.model, corpus, corpus.train.front());
  EXPECT_THROW(forward_s2gt(model, clip, {}, false, nullptr), std::logic_error);
}

TEST_F(PipelineTest, TrainingReducesLossAndWritesArtifacts) {
  auto c = config("train");
  c.train.epochs = 6;
  std::vector<EpochRecord> seen;
  const auto s = train(c, false, 1, [&](const EpochRecord& r) { seen.push_back(r); });
  ASSERT_EQ(s.epochs.size(), 6u);
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_LT(s.epochs.back().train_loss, s.epochs.front().train_loss);
  for (const char* f : {"config.json", "last.ckpt", "best.ckpt", "train_report.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(c.paths.run_dir + "/" + f)) << f;
  std::size_t lines = 0;
  for (char ch : read_file(c.paths.run_dir + "/train_report.jsonl")) lines += ch == '\n';
  EXPECT_EQ(lines, 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(s.epochs[i].lr, cosine_lr(static_cast<double>(i), 6, 1e-3), 1e-12);
}

TEST_F(PipelineTest, ResumeMatchesUninterruptedRun) {
  auto full = config("full");
  train(full, false, 1);
  auto split = config("split");
  split.train.stop_after_epochs = 2;
  EXPECT_EQ(train(split, false, 1).epochs.size(), 2u);
  split.train.stop_after_epochs = 0;
  EXPECT_EQ(train(split, true, 1).epochs.size(), 2u);
  EXPECT_EQ(read_file(full.paths.run_dir + "/train_report.jsonl"), read_file(split.paths.run_dir + "/train_report.jsonl"));
  EXPECT_EQ(read_file(full.paths.run_dir + "/last.ckpt"), read_file(split.paths.run_dir + "/last.ckpt"));
}

TEST_F(PipelineTest, CheckpointRoundTripAndMismatch) {
  auto c = config("ckpt");
  c.train.epochs = 1;
  train(c, false, 1);
  const auto corpus = synth::load_corpus(c.paths.corpus);
  Model<float> a(c.model, corpus.gloss_vocab.size() + 1, corpus.word_vocab.size(), 99);
  AdamState adam;
  TrainingState st;
  load_checkpoint(c.paths.run_dir + "/last.ckpt", a, &adam, &st);
  EXPECT_EQ(st.epoch, 1u);
  TempDir tmp("ckpt_rt");
  save_checkpoint(tmp / "copy.ckpt", a, adam, st);
  EXPECT_EQ(read_file(tmp / "copy.ckpt"), read_file(c.paths.run_dir + "/last.ckpt"));

  auto other = c.model;
  other.heads = 4;
  Model<float> b(other, corpus.gloss_vocab.size() + 1, corpus.word_vocab.size(), 1);
  EXPECT_THROW(load_checkpoint(c.paths.run_dir + "/last.ckpt", b, nullptr, nullptr), MismatchError);
  EXPECT_THROW(load_checkpoint(tmp / "missing.ckpt", a, nullptr, nullptr), NotFoundError);
  testing_util::write_file(tmp / "junk.ckpt", "not a checkpoint");
  EXPECT_THROW(load_checkpoint(tmp / "junk.ckpt", a, nullptr, nullptr), FormatError);
}

TEST_F(PipelineTest, LossWeightSweepTrains) {
  for (const auto& [li, lf] : std::vector<std::pair<double, double>>{{0.0, 1.0}, {1.0, 0.0}, {0.5, 2.0}}) {
    auto c = config("sweep_" + std::to_string(li) + "_" + std::to_string(lf));
    c.train.epochs = 1;
    c.train.lambda_inter = li;
    c.train.lambda_final = lf;
    const auto s = train(c, false, 1);
    ASSERT_EQ(s.epochs.size(), 1u);
    EXPECT_TRUE(std::isfinite(s.epochs[0].train_loss));
  }
}

TEST_F(PipelineTest, EvaluateFlopsAndMaskDump) {
  auto c = config("eval");
  c.model.protocol = Protocol::kS2GT;
  c.train.epochs = 1;
  train(c, false, 1);
  const auto trained = load_trained(c, c.paths.run_dir + "/best.ckpt");
  const auto r = evaluate(c, trained, "dev", 1);
  EXPECT_EQ(r.report.n_clips, 4u);
  EXPECT_TRUE(r.report.has_translation);
  EXPECT_EQ(r.rows.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(c.paths.run_dir + "/eval_dev.json"));
  EXPECT_THROW(evaluate(c, trained, "val", 1), std::invalid_argument);

  const auto f = flops_report(c, "dev", 1);
  EXPECT_EQ(f.clips, 4u);
  EXPECT_GT(f.sparse_macs, 0.0);
  EXPECT_LT(f.ratio(), 1.0);

  TempDir tmp("mask");
  const auto& clip = trained.corpus.dev.front();
  const auto m = mask_dump(c, trained, clip.id, tmp / "m.evvg");
  EXPECT_EQ(read_voxel(read_file(tmp / "m.evvg")), m);
  for (float v : m.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(mask_dump(c, trained, "clip_9999", ""), NotFoundError);

  auto mismatched = c;
  mismatched.model.dim = 8;
  mismatched.model.backbone_channels = {8, 8};
  EXPECT_THROW(load_trained(mismatched, c.paths.run_dir + "/best.ckpt"), MismatchError);
}

TEST_F(PipelineTest, MissingCorpusIsNotFound) {
  auto c = config("nocorpus");
  c.paths.corpus = c.paths.run_dir + "/does_not_exist";
  EXPECT_THROW(train(c, false, 1), NotFoundError);
}

}  // namespace
}  // namespace evsign::pipeline
