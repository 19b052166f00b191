/*
 * Copyright (c) 2026 The fedglmm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEDGLMM_FEDGLMM_H
#define FEDGLMM_FEDGLMM_H

#include <stddef.h>
#include <stdint.h>

#if defined(FEDGLMM_BUILDING_LIBRARY)
#define FG_API __attribute__((visibility("default")))
#else
#define FG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
typedef enum fg_status {
  FG_OK = 0,
  FG_ERR_INTERNAL = 1,
  FG_ERR_USAGE = 2,         /* bad argument, configuration or input file */
  FG_ERR_COLLISION = 3,     /* output exists and force was not set */
  FG_ERR_NOT_CONVERGED = 4, /* results were still written */
  FG_ERR_FEDERATION = 5     /* network failure, timeout, abort or cancel */
} fg_status;

typedef struct fg_config fg_config;
typedef struct fg_data fg_data;
typedef struct fg_result fg_result;

FG_API const char* fg_version(void);

/* Message for the last failing call on this thread ("" if none). */
FG_API const char* fg_last_error(void);

FG_API const char* fg_status_name(fg_status status);

/* ---- configuration ------------------------------------------------- */

FG_API fg_config* fg_config_new(void);
FG_API void fg_config_free(fg_config* cfg);
FG_API fg_status fg_config_load_file(fg_config* cfg, const char* path);
FG_API fg_status fg_config_set(fg_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL terminated). Returns the full length, or -1 on error. */
FG_API ptrdiff_t fg_config_get(const fg_config* cfg, const char* key, char* buf, size_t len);
/* Canonical "key = value" text of every setting. Same length convention. */
FG_API ptrdiff_t fg_config_dump(const fg_config* cfg, char* buf, size_t len);

/* ---- data ------------------------------------------------------------ */

FG_API fg_status fg_data_load_csv(const char* path, fg_data** out);
/* Row-major x (n x p, first column all ones), y in {0,1}. */
FG_API fg_status fg_data_from_arrays(const int64_t* site_ids, const double* x, const double* y, size_t n,
                                     size_t p, fg_data** out);
FG_API void fg_data_free(fg_data* data);
FG_API size_t fg_data_num_sites(const fg_data* data);
FG_API size_t fg_data_num_rows(const fg_data* data);
FG_API size_t fg_data_num_params(const fg_data* data);

/* ---- fitting --------------------------------------------------------- */

/* In-process fit. FG_ERR_NOT_CONVERGED still returns a result in *out. */
FG_API fg_status fg_fit(const fg_config* cfg, const fg_data* data, fg_result** out);

FG_API void fg_result_free(fg_result* r);
FG_API size_t fg_result_num_params(const fg_result* r);
FG_API size_t fg_result_num_sites(const fg_result* r);
FG_API int fg_result_converged(const fg_result* r);
FG_API int fg_result_iterations(const fg_result* r);
FG_API int fg_result_inference_available(const fg_result* r);
FG_API double fg_result_tau(const fg_result* r);
FG_API double fg_result_lambda(const fg_result* r);
FG_API double fg_result_loglik(const fg_result* r);
FG_API double fg_result_aic(const fg_result* r);
FG_API double fg_result_bic(const fg_result* r);
FG_API double fg_result_final_delta(const fg_result* r);

typedef enum fg_vector {
  FG_BETA = 0,
  FG_STD_ERR = 1,
  FG_Z = 2,
  FG_P_VALUE = 3,
  FG_CI_LOW = 4,
  FG_CI_HIGH = 5
} fg_vector;

/* Copies min(len, p) values. */
FG_API fg_status fg_result_copy(const fg_result* r, fg_vector which, double* out, size_t len);
FG_API fg_status fg_result_site(const fg_result* r, size_t index, int64_t* site_id, double* mu_hat);

/* ---- file-level commands ------------------------------------------- */

FG_API fg_status fg_generate(const fg_config* cfg, int setting_id, const char* out_dir, int force);

/* Fits a data file and writes <out_prefix>.result plus its CSV tables.
   out may be NULL. */
FG_API fg_status fg_fit_file(const fg_config* cfg, const char* data_path, const char* out_prefix, int force,
                             fg_result** out);

typedef void (*fg_listening_fn)(uint16_t port, void* user);

/* Runs the coordinator until the session ends. dataset_label may be NULL. */
FG_API fg_status fg_coordinate(const fg_config* cfg, const char* endpoint, int expected_sites,
                               const char* out_prefix, int force, const char* dataset_label,
                               fg_listening_fn on_listening, void* user, fg_result** out);

/* site_id < 0 means the file must hold exactly one site. out_path may be NULL. */
FG_API fg_status fg_serve_site(const fg_config* cfg, const char* data_path, const char* endpoint, int64_t site_id,
                               const char* out_path, int force);

FG_API fg_status fg_evaluate(const fg_config* cfg, const char* const* result_patterns, size_t count,
                             const char* truth_dir, const char* out_dir, int force);

/* Async-signal-safe: asks a running coordinate or serve-site call to abort. */
FG_API void fg_cancel(void);
FG_API void fg_reset_cancel(void);

#ifdef __cplusplus
}
#endif

#endif /* FEDGLMM_FEDGLMM_H */
