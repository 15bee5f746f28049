#ifndef FEDMR_H
#define FEDMR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `FMR_STATUS_OK` is zero.
 */
typedef enum FmrStatus {
  FMR_STATUS_OK = 0,
  FMR_STATUS_NULL_POINTER = 1,
  FMR_STATUS_INVALID_UTF8 = 2,
  FMR_STATUS_INVALID_CONFIG = 3,
  FMR_STATUS_IO = 4,
  FMR_STATUS_INVALID_DATA = 5,
  FMR_STATUS_SHAPE = 6,
  FMR_STATUS_OUT_OF_RANGE = 7,
  FMR_STATUS_RUNTIME = 8,
  FMR_STATUS_PANIC = 9,
} FmrStatus;

/**
 * A config plus accumulated `key=value` overrides.
 */
typedef struct FmrExperiment FmrExperiment;

/**
 * A trained model.
 */
typedef struct FmrModel FmrModel;

/**
 * Records and models of a finished run.
 */
typedef struct FmrRunResult FmrRunResult;

/**
 * One round of a run. `accuracy` and `loss` are NaN on rounds that were
 * not evaluated; `evaluated` tells which.
 */
typedef struct FmrRoundMetrics {
  uint64_t round;
  /**
   * 0 = pretrain (aggregation), 1 = recombine.
   */
  uint32_t stage;
  bool evaluated;
  double accuracy;
  double loss;
  double mean_local_loss;
  uint64_t transfers;
  uint64_t num_clients;
} FmrRoundMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *fmr_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void fmr_string_free(char *s);

/**
 * Parses and validates a TOML config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum FmrStatus fmr_experiment_from_toml(const char *toml, struct FmrExperiment **out_exp);

/**
 * Applies a `key=value` override, e.g. `"rounds=5"` or `"local.epochs=1"`.
 * The experiment is left unchanged if the result does not validate.
 *
 * # Safety
 * `exp` must be a live handle; `key_value` a NUL-terminated string.
 */
enum FmrStatus fmr_experiment_set(struct FmrExperiment *exp, const char *key_value);

/**
 * Writes the canonical resolved config as TOML.
 *
 * # Safety
 * `exp` must be a live handle; `out_toml` must be writable.
 */
enum FmrStatus fmr_experiment_resolved_toml(const struct FmrExperiment *exp, char **out_toml);

/**
 * Runs the experiment in memory. No files are written.
 *
 * # Safety
 * `exp` must be a live handle; `out_result` must be writable.
 */
enum FmrStatus fmr_experiment_run(const struct FmrExperiment *exp,
                                  struct FmrRunResult **out_result);

/**
 * # Safety
 * `exp` must be null or a live handle; it is invalid afterwards.
 */
void fmr_experiment_free(struct FmrExperiment *exp);

/**
 * # Safety
 * `result` must be a live handle; `out_count` must be writable.
 */
enum FmrStatus fmr_run_result_round_count(const struct FmrRunResult *result, size_t *out_count);

/**
 * Metrics of round `index` (zero-based; round numbers start at 1).
 *
 * # Safety
 * `result` must be a live handle; `out_metrics` must be writable.
 */
enum FmrStatus fmr_run_result_round(const struct FmrRunResult *result,
                                    size_t index,
                                    struct FmrRoundMetrics *out_metrics);

/**
 * Copies out the final global model as a new handle.
 *
 * # Safety
 * `result` must be a live handle; `out_model` must be writable.
 */
enum FmrStatus fmr_run_result_final_model(const struct FmrRunResult *result,
                                          struct FmrModel **out_model);

/**
 * The learning curve as `metrics.csv` text.
 *
 * # Safety
 * `result` must be a live handle; `out_csv` must be writable.
 */
enum FmrStatus fmr_run_result_metrics_csv(const struct FmrRunResult *result, char **out_csv);

/**
 * # Safety
 * `result` must be null or a live handle; it is invalid afterwards.
 */
void fmr_run_result_free(struct FmrRunResult *result);

/**
 * Loads a `model.ckpt` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` must be writable.
 */
enum FmrStatus fmr_model_load(const char *path, struct FmrModel **out_model);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum FmrStatus fmr_model_save(const struct FmrModel *model, const char *path);

/**
 * Number of output classes.
 *
 * # Safety
 * `model` must be a live handle; `out_classes` must be writable.
 */
enum FmrStatus fmr_model_num_classes(const struct FmrModel *model, size_t *out_classes);

/**
 * Number of `double`s in one input sample.
 *
 * # Safety
 * `model` must be a live handle; `out_len` must be writable.
 */
enum FmrStatus fmr_model_input_len(const struct FmrModel *model, size_t *out_len);

/**
 * Class probabilities for `num_samples` row-major samples.
 * `input` holds `num_samples * input_len` values and `out_probs` receives
 * `num_samples * num_classes`; `out_capacity` is its length in doubles.
 *
 * # Safety
 * `input` and `out_probs` must point to at least the stated number of
 * doubles.
 */
enum FmrStatus fmr_model_predict(const struct FmrModel *model,
                                 const double *input,
                                 size_t num_samples,
                                 double *out_probs,
                                 size_t out_capacity);

/**
 * # Safety
 * `model` must be null or a live handle; it is invalid afterwards.
 */
void fmr_model_free(struct FmrModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDMR_H */
