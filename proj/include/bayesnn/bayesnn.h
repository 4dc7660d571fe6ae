#ifndef BAYESNN_BAYESNN_H
#define BAYESNN_BAYESNN_H

#include <stddef.h>
#include <stdint.h>

#if defined(BAYESNN_BUILDING_LIBRARY)
#define BNN_API __attribute__((visibility("default")))
#else
#define BNN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bnn_status {
  BNN_OK = 0,
  BNN_ERR_INTERNAL = 1,
  BNN_ERR_CONFIG = 2,
  BNN_ERR_DATA = 3,
  BNN_ERR_NUMERICAL = 4
} bnn_status;

typedef struct bnn_config bnn_config;
typedef struct bnn_run bnn_run;
typedef struct bnn_report bnn_report;

BNN_API const char* bnn_version(void);

/* Message of the last failing call on this thread; empty when none. */
BNN_API const char* bnn_last_error(void);

/* ---- configuration ---- */
BNN_API bnn_status bnn_config_load(const char* path, bnn_config** out);
BNN_API bnn_status bnn_config_parse(const char* text, const char* base_dir, bnn_config** out);
/* key is "section.key". */
BNN_API bnn_status bnn_config_set(bnn_config* cfg, const char* key, const char* value);
BNN_API void bnn_config_free(bnn_config* cfg);

/* ---- runs ---- */
/* seed may be NULL to use the configured seed; out_dir may be NULL or empty. */
BNN_API bnn_status bnn_fit(const bnn_config* cfg, const uint64_t* seed, const char* out_dir,
                           bnn_run** out);
/* Like bnn_fit but only for the samplers (mh, hmc). */
BNN_API bnn_status bnn_sample(const bnn_config* cfg, const uint64_t* seed, const char* out_dir,
                              bnn_run** out);
BNN_API const char* bnn_run_dir(const bnn_run* run);
BNN_API const char* bnn_run_method(const bnn_run* run);
BNN_API int64_t bnn_run_iterations(const bnn_run* run);
BNN_API int bnn_run_early_stopped(const bnn_run* run);
/* Each returns 1 and writes *value when the quantity exists for the run, else 0. */
BNN_API int bnn_run_final_elbo(const bnn_run* run, double* value);
BNN_API int bnn_run_kl_to_oracle(const bnn_run* run, double* value);
BNN_API int bnn_run_accept_rate(const bnn_run* run, double* value);
/* Summary as a JSON document. */
BNN_API const char* bnn_run_summary_json(const bnn_run* run);
BNN_API void bnn_run_free(bnn_run* run);

/* Writes one predictive record per input row to out_path. n_rows may be NULL. */
BNN_API bnn_status bnn_predict(const char* run_dir, const char* inputs_path, const char* out_path,
                               size_t* n_rows);

/* ---- invariant checks ---- */
/* suite: gradients | duality | manifold | samplers | all. */
BNN_API bnn_status bnn_check(const char* suite, uint64_t seed, int fault, bnn_report** out);
BNN_API size_t bnn_report_size(const bnn_report* report);
BNN_API int bnn_report_passed(const bnn_report* report);
/* Per-invariant accessors; index must be below bnn_report_size. */
BNN_API const char* bnn_report_name(const bnn_report* report, size_t index);
BNN_API const char* bnn_report_suite(const bnn_report* report, size_t index);
BNN_API double bnn_report_measured(const bnn_report* report, size_t index);
BNN_API int bnn_report_item_passed(const bnn_report* report, size_t index);
/* Full human-readable report, one line per invariant. */
BNN_API const char* bnn_report_text(const bnn_report* report);
BNN_API void bnn_report_free(bnn_report* report);

#ifdef __cplusplus
}
#endif

#endif
