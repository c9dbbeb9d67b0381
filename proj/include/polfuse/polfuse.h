/* Copyright 2026 The Polfuse Authors.
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

/* C interface of libpolfuse.
 *
 * Every function that can fail returns a polfuse_status. On failure the
 * message is available from polfuse_last_error() (thread-local, valid until
 * the next failing call on the same thread). Handles are opaque and owned by
 * the caller; release them with the matching _free function.
 */

#ifndef POLFUSE_POLFUSE_H_
#define POLFUSE_POLFUSE_H_

#include <stddef.h>

#if defined(POLFUSE_BUILDING_LIBRARY)
#define POLFUSE_API __attribute__((visibility("default")))
#else
#define POLFUSE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum polfuse_status {
  POLFUSE_OK = 0,
  POLFUSE_ERR_INTERNAL = 1,
  POLFUSE_ERR_CONFIG = 2,
  POLFUSE_ERR_DATA = 3,
  POLFUSE_ERR_CAPABILITY = 4,
  POLFUSE_ERR_INVALID_ARGUMENT = 5,
  POLFUSE_ERR_NUMERICAL = 6
} polfuse_status;

typedef struct polfuse_experiment polfuse_experiment;
typedef struct polfuse_dataset polfuse_dataset;

typedef void (*polfuse_message_fn)(const char* message, void* user_data);

POLFUSE_API const char* polfuse_version(void);
/* "ok", "config", "data", ... */
POLFUSE_API const char* polfuse_status_name(int status);
POLFUSE_API const char* polfuse_last_error(void);

/* NULL restores the default (warnings to stderr, info dropped). */
POLFUSE_API void polfuse_set_warning_handler(polfuse_message_fn fn, void* user_data);
POLFUSE_API void polfuse_set_info_handler(polfuse_message_fn fn, void* user_data);

/* Experiments. */
POLFUSE_API polfuse_status polfuse_experiment_open(const char* config_path, polfuse_experiment** out);
/* Keys: "task", "channels", "seed", "out". The config is re-validated. */
POLFUSE_API polfuse_status polfuse_experiment_set(polfuse_experiment* experiment, const char* key,
                                                  const char* value);
/* "build-corpus", "extract-features", "train", "evaluate", "explain". */
POLFUSE_API polfuse_status polfuse_experiment_run(polfuse_experiment* experiment, const char* command);
POLFUSE_API const char* polfuse_experiment_output_dir(const polfuse_experiment* experiment);
POLFUSE_API void polfuse_experiment_free(polfuse_experiment* experiment);

/* Writes <out_dir>/comparison/ over every evaluated model. */
POLFUSE_API polfuse_status polfuse_compare(polfuse_experiment* const* experiments, size_t count,
                                           const char* out_dir);

/* Datasets (JSONL, one labelled record per line). */
POLFUSE_API polfuse_status polfuse_dataset_load(const char* path, const char* task, polfuse_dataset** out);
POLFUSE_API size_t polfuse_dataset_size(const polfuse_dataset* dataset);
POLFUSE_API polfuse_status polfuse_dataset_class_count(const polfuse_dataset* dataset, const char* label,
                                                       size_t* count);
POLFUSE_API void polfuse_dataset_free(polfuse_dataset* dataset);

/* Statistics. */
typedef struct polfuse_metrics {
  double accuracy;
  double macro_f1;
  double macro_precision;
  double macro_recall;
} polfuse_metrics;

POLFUSE_API polfuse_status polfuse_compute_metrics(const int* gold, const int* pred, size_t n, int num_classes,
                                                   polfuse_metrics* out);
POLFUSE_API polfuse_status polfuse_mcnemar_counts(size_t b, size_t c, double* statistic, double* p_value);
POLFUSE_API polfuse_status polfuse_mcnemar(const int* gold, const int* a, const int* b, size_t n,
                                           double* statistic, double* p_value);
/* table is k x k, row-major. */
POLFUSE_API polfuse_status polfuse_stuart_maxwell_table(const double* table, size_t k, double* statistic,
                                                        int* df, double* p_value);
/* McNemar for two classes, Stuart-Maxwell for more. */
POLFUSE_API polfuse_status polfuse_paired_test(const int* gold, const int* a, const int* b, size_t n,
                                               int num_classes, double* statistic, int* df, double* p_value);
/* NUL-terminated into buf; POLFUSE_ERR_INVALID_ARGUMENT when it does not fit. */
POLFUSE_API polfuse_status polfuse_format_significance(double statistic, double p_value, double alpha, char* buf,
                                                       size_t buf_len);

#ifdef __cplusplus
}
#endif

#endif /* POLFUSE_POLFUSE_H_ */
