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

#include "evsign/evsign.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "evsign/gradcheck.hpp"
#include "evsign/pipeline.hpp"

using nlohmann::json;
namespace pl = evsign::pipeline;

struct evsign_config {
  json doc;        // defaults with the file and overrides applied
  pl::Config value;
};

struct evsign_model {
  pl::Config config;
  pl::TrainedModel trained;
};

namespace {

thread_local std::string g_last_error;

evsign_status fail(evsign_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs f, translating exceptions into status codes. Order matters: the
// specific types derive from runtime_error.
template <typename F>
evsign_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return EVSIGN_OK;
  } catch (const evsign::NumericError& e) {
    return fail(EVSIGN_ERR_NUMERIC, e.what());
  } catch (const evsign::NotFoundError& e) {
    return fail(EVSIGN_ERR_NOT_FOUND, e.what());
  } catch (const evsign::FormatError& e) {
    return fail(EVSIGN_ERR_FORMAT, e.what());
  } catch (const pl::MismatchError& e) {
    return fail(EVSIGN_ERR_MISMATCH, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(EVSIGN_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(EVSIGN_ERR_INVALID_ARGUMENT, e.what());
  } catch (const json::exception& e) {
    return fail(EVSIGN_ERR_FORMAT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(EVSIGN_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(EVSIGN_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(EVSIGN_ERR_RUNTIME, "unknown error");
  }
}

char* dup(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

const pl::Config& validated(const evsign_config* config) {
  config->value.validate();
  return config->value;
}

#define EVSIGN_REQUIRE(cond, what) \
  if (!(cond)) return fail(EVSIGN_ERR_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* evsign_last_error(void) { return g_last_error.c_str(); }

const char* evsign_version(void) { return EVSIGN_VERSION_STRING; }

void evsign_string_free(char* s) { std::free(s); }

evsign_status evsign_config_load(const char* path, evsign_config** out) {
  EVSIGN_REQUIRE(out, "out must not be NULL");
  *out = nullptr;
  return guarded([&] {
    auto cfg = std::make_unique<evsign_config>();
    cfg->value = pl::load_config(path ? path : "", {});
    cfg->doc = pl::to_json(cfg->value);
    *out = cfg.release();
  });
}

evsign_status evsign_config_set(evsign_config* config, const char* assignment) {
  EVSIGN_REQUIRE(config && assignment, "config and assignment must not be NULL");
  return guarded([&] {
    json next = config->doc;
    pl::apply_override(next, assignment);
    auto value = pl::config_from_json(next, false);  // cross-field checks wait until use
    config->doc = std::move(next);
    config->value = std::move(value);
  });
}

evsign_status evsign_config_validate(const evsign_config* config) {
  EVSIGN_REQUIRE(config, "config must not be NULL");
  return guarded([&] { config->value.validate(); });
}

evsign_status evsign_config_to_json(const evsign_config* config, char** out_json) {
  EVSIGN_REQUIRE(config && out_json, "config and out_json must not be NULL");
  return guarded([&] { *out_json = dup(config->doc.dump(2)); });
}

void evsign_config_destroy(evsign_config* config) { delete config; }

evsign_status evsign_synth(const evsign_config* config, const char* out_dir, uint64_t seed, size_t threads) {
  EVSIGN_REQUIRE(config, "config must not be NULL");
  return guarded([&] {
    const auto& c = config->value;
    c.data.validate();
    evsign::synth::generate_corpus(c.data, seed, out_dir ? out_dir : c.paths.corpus, threads ? threads : 1);
  });
}

evsign_status evsign_encode_file(const evsign_config* config, const char* events_path, const char* voxel_path,
                                 size_t* segments_out) {
  EVSIGN_REQUIRE(config && events_path && voxel_path, "config, events_path and voxel_path must not be NULL");
  return guarded([&] {
    const auto grid = pl::encode_stream(validated(config).model, evsign::read_event_file_path(events_path));
    evsign::write_file(voxel_path, evsign::write_voxel(grid));
    if (segments_out) *segments_out = grid.segments;
  });
}

evsign_status evsign_train(const evsign_config* config, int resume, size_t threads, evsign_epoch_callback callback,
                           void* user) {
  EVSIGN_REQUIRE(config, "config must not be NULL");
  return guarded([&] {
    pl::ProgressFn progress;
    if (callback)
      progress = [&](const pl::EpochRecord& r) { callback(pl::to_json(r).dump().c_str(), user); };
    pl::train(validated(config), resume != 0, threads ? threads : 1, progress);
  });
}

evsign_status evsign_model_load(const evsign_config* config, const char* checkpoint, evsign_model** out) {
  EVSIGN_REQUIRE(config && checkpoint && out, "config, checkpoint and out must not be NULL");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<evsign_model>();
    m->config = validated(config);
    m->trained = pl::load_trained(m->config, checkpoint);
    *out = m.release();
  });
}

evsign_status evsign_model_evaluate(evsign_model* model, const char* split, size_t threads, char** report_json) {
  EVSIGN_REQUIRE(model && split, "model and split must not be NULL");
  return guarded([&] {
    const auto res = pl::evaluate(model->config, model->trained, split, threads ? threads : 1);
    if (report_json) *report_json = dup(evsign::metrics::to_json(res.report).dump(2));
  });
}

evsign_status evsign_model_mask_dump(evsign_model* model, const char* clip_id, const char* out_path, size_t* rows,
                                     size_t* cols) {
  EVSIGN_REQUIRE(model && clip_id, "model and clip_id must not be NULL");
  return guarded([&] {
    const auto grid = pl::mask_dump(model->config, model->trained, clip_id, out_path ? out_path : "");
    if (rows) *rows = grid.height;
    if (cols) *cols = grid.width;
  });
}

void evsign_model_destroy(evsign_model* model) { delete model; }

evsign_status evsign_gradcheck(const char* filter, char** report_json, int* all_passed) {
  return guarded([&] {
    evsign::gradcheck::SuiteOptions opt;
    if (filter) opt.filter = filter;
    const auto results = evsign::gradcheck::run_all(opt);
    if (results.empty()) throw std::invalid_argument("no gradcheck case matches filter '" + opt.filter + "'");
    if (report_json) *report_json = dup(evsign::gradcheck::to_json(results).dump(2));
    if (all_passed) *all_passed = evsign::gradcheck::all_passed(results) ? 1 : 0;
  });
}

evsign_status evsign_flops_report(const evsign_config* config, const char* split, size_t threads,
                                  char** report_json) {
  EVSIGN_REQUIRE(config && split && report_json, "config, split and report_json must not be NULL");
  return guarded([&] {
    const auto s = pl::flops_report(validated(config), split, threads ? threads : 1);
    json j{{"split", split},
           {"clips", s.clips},
           {"sparse_macs", s.sparse_macs},
           {"dense_macs", s.dense_macs},
           {"ratio", s.ratio()}};
    *report_json = dup(j.dump(2));
  });
}

size_t evsign_default_threads(void) { return pl::default_threads(); }

}  // extern "C"
