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

// evsign command line: corpus generation, encoding, training, evaluation and
// diagnostics on top of the C API.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evsign/evsign.h"

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitRuntime = 2;

// Thrown to unwind with a specific exit code after the message is printed.
struct Exit {
  int code;
};

[[noreturn]] void die(evsign_status s, const std::string& context) {
  std::cerr << "evsign: " << context << ": " << evsign_last_error() << "\n";
  // Bad configuration values are a usage problem; everything else happened
  // while doing the work.
  throw Exit{s == EVSIGN_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime};
}

void check(evsign_status s, const std::string& context) {
  if (s != EVSIGN_OK) die(s, context);
}

struct ConfigDeleter {
  void operator()(evsign_config* c) const { evsign_config_destroy(c); }
};
struct ModelDeleter {
  void operator()(evsign_model* m) const { evsign_model_destroy(m); }
};
using ConfigPtr = std::unique_ptr<evsign_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<evsign_model, ModelDeleter>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  evsign_string_free(s);
  return out;
}

// Options shared by every subcommand that reads a configuration.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> sets;
  std::optional<unsigned long long> seed;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", path, "JSON config file layered over the defaults")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "dotted-path override, e.g. train.lr0=0.001 (repeatable)");
    app->add_option("--seed", seed, "shorthand for --set seed=N");
  }

  ConfigPtr load() const {
    evsign_config* raw = nullptr;
    check(evsign_config_load(path.empty() ? nullptr : path.c_str(), &raw), "loading config");
    ConfigPtr cfg(raw);
    for (const auto& s : sets) check(evsign_config_set(cfg.get(), s.c_str()), "--set " + s);
    if (seed) check(evsign_config_set(cfg.get(), ("seed=" + std::to_string(*seed)).c_str()), "--seed");
    check(evsign_config_validate(cfg.get()), "config");
    return cfg;
  }
};

nlohmann::json config_json(const evsign_config* cfg) {
  char* s = nullptr;
  check(evsign_config_to_json(cfg, &s), "serializing config");
  return nlohmann::json::parse(take_string(s));
}

std::string run_path(const evsign_config* cfg, const std::string& file) {
  return config_json(cfg)["paths"]["run_dir"].get<std::string>() + "/" + file;
}

void print_epoch(const char* record, void*) {
  const auto r = nlohmann::json::parse(record);
  std::fprintf(stderr, "epoch %3zu  lr %.3e  loss %.4f  dev_wer %.4f", r["epoch"].get<std::size_t>(),
               r["lr"].get<double>(), r["train_loss"].get<double>(), r["dev_wer"].get<double>());
  if (r.contains("dev_bleu1")) std::fprintf(stderr, "  dev_bleu1 %.2f", r["dev_bleu1"].get<double>());
  std::fprintf(stderr, "\n");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::cerr << "evsign: cannot write " << path << "\n";
    throw Exit{kExitRuntime};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evsign: event-based sign language recognition and translation"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.set_version_flag("--version", std::string(evsign_version()));
  std::size_t threads = evsign_default_threads();
  app.add_option("-j,--threads", threads, "worker threads (default: EVSIGN_THREADS or core count)")
      ->check(CLI::PositiveNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "generate the synthetic event corpus");
  ConfigOptions synth_cfg;
  synth_cfg.attach(synth);
  std::string synth_out;
  synth->add_option("-o,--out", synth_out, "output directory (default: paths.corpus)");

  // encode
  auto* encode = app.add_subcommand("encode", "voxelize one event file into an EVVG grid");
  ConfigOptions encode_cfg;
  encode_cfg.attach(encode);
  std::string events_in, voxel_out;
  encode->add_option("events", events_in, "input .events file")->required()->check(CLI::ExistingFile);
  encode->add_option("voxel", voxel_out, "output EVVG file")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model on the corpus");
  ConfigOptions train_cfg;
  train_cfg.attach(train);
  bool resume = false;
  train->add_flag("--resume", resume, "continue from <run_dir>/last.ckpt");

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a split");
  ConfigOptions eval_cfg;
  eval_cfg.attach(eval);
  std::string eval_ckpt, eval_split = "dev";
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint (default: <run_dir>/best.ckpt)");
  eval->add_option("--split", eval_split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  std::string gc_filter, gc_json;
  gradcheck->add_option("--filter", gc_filter, "run only cases whose name contains this");
  gradcheck->add_option("--json", gc_json, "also write the full report here");

  // mask-dump
  auto* mask = app.add_subcommand("mask-dump", "export a clip's intra-gloss attention mask");
  ConfigOptions mask_cfg;
  mask_cfg.attach(mask);
  std::string mask_ckpt, mask_clip, mask_out;
  mask->add_option("--checkpoint", mask_ckpt, "checkpoint (default: <run_dir>/best.ckpt)");
  mask->add_option("--clip", mask_clip, "clip id, e.g. clip_0003")->required();
  mask->add_option("-o,--out", mask_out, "output EVVG file")->required();

  // flops
  auto* flops = app.add_subcommand("flops", "sparse versus dense backbone cost on a split");
  ConfigOptions flops_cfg;
  flops_cfg.attach(flops);
  std::string flops_split = "dev";
  flops->add_option("--split", flops_split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));

  // config
  auto* show = app.add_subcommand("config", "print the resolved configuration");
  ConfigOptions show_cfg;
  show_cfg.attach(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return kExitOk;
    std::cerr << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*synth) {
      const auto cfg = synth_cfg.load();
      const auto j = config_json(cfg.get());
      const std::string out = synth_out.empty() ? j["paths"]["corpus"].get<std::string>() : synth_out;
      check(evsign_synth(cfg.get(), out.c_str(), j["seed"].get<std::uint64_t>(), threads), "synth");
      std::cout << "wrote corpus to " << out << "\n";
    } else if (*encode) {
      const auto cfg = encode_cfg.load();
      std::size_t segments = 0;
      check(evsign_encode_file(cfg.get(), events_in.c_str(), voxel_out.c_str(), &segments), "encode");
      std::cout << "wrote " << voxel_out << " (" << segments << " segments)\n";
    } else if (*train) {
      const auto cfg = train_cfg.load();
      check(evsign_train(cfg.get(), resume ? 1 : 0, threads, print_epoch, nullptr), "train");
      std::cout << "checkpoints in " << run_path(cfg.get(), "") << "\n";
    } else if (*eval) {
      const auto cfg = eval_cfg.load();
      const auto ckpt = eval_ckpt.empty() ? run_path(cfg.get(), "best.ckpt") : eval_ckpt;
      evsign_model* raw = nullptr;
      check(evsign_model_load(cfg.get(), ckpt.c_str(), &raw), "loading " + ckpt);
      ModelPtr model(raw);
      char* report = nullptr;
      check(evsign_model_evaluate(model.get(), eval_split.c_str(), threads, &report), "eval");
      std::cout << take_string(report) << "\n";
    } else if (*gradcheck) {
      char* report = nullptr;
      int ok = 0;
      check(evsign_gradcheck(gc_filter.empty() ? nullptr : gc_filter.c_str(), &report, &ok), "gradcheck");
      const std::string text = take_string(report);
      if (!gc_json.empty()) write_text(gc_json, text + "\n");
      const auto parsed = nlohmann::json::parse(text);
      for (const auto& c : parsed["cases"]) {
        std::printf("%-4s %-9s %-28s %2d-bit  max_rel %.3e  tol %.0e\n", c["passed"].get<bool>() ? "ok" : "FAIL",
                    c["suite"].get<std::string>().c_str(), c["name"].get<std::string>().c_str(),
                    c["bits"].get<int>(), c["max_rel_err"].get<double>(), c["tolerance"].get<double>());
      }
      std::printf("%s\n", ok ? "all cases passed" : "some cases FAILED");
      return ok ? kExitOk : kExitRuntime;
    } else if (*mask) {
      const auto cfg = mask_cfg.load();
      const auto ckpt = mask_ckpt.empty() ? run_path(cfg.get(), "best.ckpt") : mask_ckpt;
      evsign_model* raw = nullptr;
      check(evsign_model_load(cfg.get(), ckpt.c_str(), &raw), "loading " + ckpt);
      ModelPtr model(raw);
      std::size_t rows = 0, cols = 0;
      check(evsign_model_mask_dump(model.get(), mask_clip.c_str(), mask_out.c_str(), &rows, &cols), "mask-dump");
      std::cout << "wrote " << mask_out << " (1x1x" << rows << "x" << cols << ")\n";
    } else if (*flops) {
      const auto cfg = flops_cfg.load();
      char* report = nullptr;
      check(evsign_flops_report(cfg.get(), flops_split.c_str(), threads, &report), "flops");
      std::cout << take_string(report) << "\n";
    } else if (*show) {
      std::cout << config_json(show_cfg.load().get()).dump(2) << "\n";
    }
  } catch (const Exit& e) {
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "evsign: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
