/*
 * Copyright 2026 The EvSign Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef EVSIGN_EVSIGN_H_
#define EVSIGN_EVSIGN_H_

/*
 * C interface to the evsign library.
 *
 * Every function returns an evsign_status. On failure, evsign_last_error()
 * returns a message describing the most recent failure on the calling thread.
 * Strings handed out through char** parameters are owned by the caller and
 * must be released with evsign_string_free().
 */

#include <stddef.h>
#include <stdint.h>

#if defined(EVSIGN_BUILDING_LIBRARY)
#define EVSIGN_API __attribute__((visibility("default")))
#else
#define EVSIGN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum evsign_status {
  EVSIGN_OK = 0,
  EVSIGN_ERR_INVALID_ARGUMENT = 1, /* bad argument or configuration value */
  EVSIGN_ERR_NOT_FOUND = 2,        /* missing corpus, checkpoint, clip or file */
  EVSIGN_ERR_FORMAT = 3,           /* malformed file contents */
  EVSIGN_ERR_MISMATCH = 4,         /* checkpoint written for another configuration */
  EVSIGN_ERR_NUMERIC = 5,          /* non-finite value in checked mode */
  EVSIGN_ERR_RUNTIME = 6           /* anything else */
} evsign_status;

EVSIGN_API const char* evsign_last_error(void);
EVSIGN_API const char* evsign_version(void);
EVSIGN_API void evsign_string_free(char* s);

/* Configuration ---------------------------------------------------------- */

typedef struct evsign_config evsign_config;

/* Defaults, then the JSON file at `path` (may be NULL). */
EVSIGN_API evsign_status evsign_config_load(const char* path, evsign_config** out);
/* Dotted-path override such as "train.lr0=0.001". */
EVSIGN_API evsign_status evsign_config_set(evsign_config* config, const char* assignment);
/* Checks constraints that span several fields (for example model.dim against
 * the last backbone channel count). evsign_config_set only checks the path
 * and value type, so related fields can be changed one at a time; functions
 * that consume a config validate it themselves. */
EVSIGN_API evsign_status evsign_config_validate(const evsign_config* config);
EVSIGN_API evsign_status evsign_config_to_json(const evsign_config* config, char** out_json);
EVSIGN_API void evsign_config_destroy(evsign_config* config);

/* Data ------------------------------------------------------------------- */

/* Generates the corpus described by the config's data section into
 * `out_dir` (NULL: paths.corpus) using `seed`. */
EVSIGN_API evsign_status evsign_synth(const evsign_config* config, const char* out_dir, uint64_t seed, size_t threads);

/* Encodes one event file into an EVVG voxel file; reports the segment count. */
EVSIGN_API evsign_status evsign_encode_file(const evsign_config* config, const char* events_path,
                                            const char* voxel_path, size_t* segments_out);

/* Training --------------------------------------------------------------- */

/* Called once per epoch with the JSON record written to the report. */
typedef void (*evsign_epoch_callback)(const char* record_json, void* user);

EVSIGN_API evsign_status evsign_train(const evsign_config* config, int resume, size_t threads,
                                      evsign_epoch_callback callback, void* user);

/* Trained model ---------------------------------------------------------- */

typedef struct evsign_model evsign_model;

EVSIGN_API evsign_status evsign_model_load(const evsign_config* config, const char* checkpoint, evsign_model** out);
/* Scores a split and writes eval_<split>.json and hyps_<split>.jsonl into the
 * run directory; `report_json` (may be NULL) receives the report. */
EVSIGN_API evsign_status evsign_model_evaluate(evsign_model* model, const char* split, size_t threads,
                                               char** report_json);
/* Writes the intra-gloss attention mask of one clip as a 1 x 1 x L x P EVVG
 * file (`out_path` may be NULL) and reports its dimensions. */
EVSIGN_API evsign_status evsign_model_mask_dump(evsign_model* model, const char* clip_id, const char* out_path,
                                                size_t* rows, size_t* cols);
EVSIGN_API void evsign_model_destroy(evsign_model* model);

/* Diagnostics ------------------------------------------------------------ */

/* Runs the finite-difference suites; `filter` (may be NULL) selects cases by
 * substring. */
EVSIGN_API evsign_status evsign_gradcheck(const char* filter, char** report_json, int* all_passed);
/* Sparse versus dense multiply-accumulate counts of the backbone on a split. */
EVSIGN_API evsign_status evsign_flops_report(const evsign_config* config, const char* split, size_t threads,
                                             char** report_json);

/* EVSIGN_THREADS if set, else the hardware concurrency. */
EVSIGN_API size_t evsign_default_threads(void);

#ifdef __cplusplus
}
#endif

#endif /* EVSIGN_EVSIGN_H_ */
