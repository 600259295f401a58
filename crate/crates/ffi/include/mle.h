#ifndef MLE_H
#define MLE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MleStatus {
  MLE_STATUS_OK = 0,
  MLE_STATUS_NULL_POINTER = 1,
  MLE_STATUS_INVALID_UTF8 = 2,
  MLE_STATUS_BUFFER_TOO_SMALL = 3,
  MLE_STATUS_INVALID_MODEL = 4,
  MLE_STATUS_NON_COMMENSURATE = 5,
  MLE_STATUS_DIMENSION = 6,
  MLE_STATUS_INVALID_ARGUMENT = 7,
  MLE_STATUS_NOT_CONVERGED = 8,
  MLE_STATUS_SINGULAR = 9,
  MLE_STATUS_WINDOW_OUT_OF_RANGE = 10,
  MLE_STATUS_CONFIG = 11,
  MLE_STATUS_PARSE = 12,
  MLE_STATUS_IO = 13,
  MLE_STATUS_PANIC = 14,
} MleStatus;

// An ARX model.
typedef struct MleArxModel MleArxModel;

// A closed-loop record of inputs, outputs and references.
typedef struct MleRecord MleRecord;

// Result of an estimation: the cross-validation report and the corrected model.
typedef struct MleReport MleReport;

// A simulation scenario: plant, mismatch, controller, noise and estimation settings.
typedef struct MleScenario MleScenario;

typedef struct MleArxShape {
  size_t outputs;
  size_t inputs;
  size_t order;
  double sample_period;
} MleArxShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next library call on the same thread.
const char *mle_last_error_message(void);

// # Safety
// `s` must be null or a string returned by this library, not yet freed.
void mle_string_free(char *s);

// Built-in scenario `"gain"`, `"delay"` or `"null"` with the given noise seed.
//
// # Safety
// `id` must be a NUL-terminated string; `out` must be writable.
enum MleStatus mle_scenario_builtin(const char *id, uint64_t seed, struct MleScenario **out);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum MleStatus mle_scenario_from_json(const char *json, struct MleScenario **out);

// # Safety
// `scenario` must be a live handle; `out` must be writable. Free the string with [`mle_string_free`].
enum MleStatus mle_scenario_to_json(const struct MleScenario *scenario,
                                    char **out);

// # Safety
// `scenario` must be null or a handle not yet freed.
void mle_scenario_free(struct MleScenario *scenario);

// Simulate closed-loop run `run` (zero-based) of the scenario.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum MleStatus mle_scenario_simulate(const struct MleScenario *scenario,
                                     size_t run,
                                     struct MleRecord **out);

// Base ARX model of the scenario's nominal plant.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum MleStatus mle_scenario_base_model(const struct MleScenario *scenario,
                                       struct MleArxModel **out);

// # Safety
// `csv` must be a NUL-terminated string; `out` must be writable.
enum MleStatus mle_record_from_csv(const char *csv, struct MleRecord **out);

// # Safety
// `record` must be a live handle; `out` must be writable. Free the string with [`mle_string_free`].
enum MleStatus mle_record_to_csv(const struct MleRecord *record, char **out);

// Number of samples in the record, or 0 for a null handle.
//
// # Safety
// `record` must be null or a live handle.
size_t mle_record_len(const struct MleRecord *record);

// # Safety
// `record` must be null or a handle not yet freed.
void mle_record_free(struct MleRecord *record);

// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum MleStatus mle_arx_from_json(const char *json, struct MleArxModel **out);

// # Safety
// `model` must be a live handle; `out` must be writable. Free the string with [`mle_string_free`].
enum MleStatus mle_arx_to_json(const struct MleArxModel *model, char **out);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum MleStatus mle_arx_shape(const struct MleArxModel *model, struct MleArxShape *out);

// Copy the coefficient matrix, row-major, into `buffer` of `len` values.
// It needs `outputs * order * (inputs + outputs)` values.
//
// # Safety
// `model` must be a live handle; `buffer` must hold `len` writable doubles.
enum MleStatus mle_arx_coefficients(const struct MleArxModel *model, double *buffer, size_t len);

// First `samples` values of the unit step response from `input` to `output`,
// starting at `k = 0`.
//
// # Safety
// `model` must be a live handle; `buffer` must hold `samples` writable doubles.
enum MleStatus mle_arx_step_response(const struct MleArxModel *model,
                                     size_t output,
                                     size_t input,
                                     size_t samples,
                                     double *buffer);

// # Safety
// `model` must be null or a handle not yet freed.
void mle_arx_free(struct MleArxModel *model);

// Estimate the mismatch of `base` from two records using the scenario's
// window, lambda grid and solver settings.
//
// # Safety
// All handles must be live; `out` must be writable.
enum MleStatus mle_estimate(const struct MleScenario *scenario,
                            const struct MleRecord *record1,
                            const struct MleRecord *record2,
                            const struct MleArxModel *base,
                            struct MleReport **out);

// Cross-validated lambda of the report, or NaN for a null handle.
//
// # Safety
// `report` must be null or a live handle.
double mle_report_lambda_star(const struct MleReport *report);

// Corrected model at the cross-validated lambda, as a new handle.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum MleStatus mle_report_corrected_model(const struct MleReport *report, struct MleArxModel **out);

// # Safety
// `report` must be null or a handle not yet freed.
void mle_report_free(struct MleReport *report);

// Step-response error of `model` against the scenario's true plant over the
// scenario's benchmark horizon.
//
// # Safety
// Both handles must be live; `error` must be writable.
enum MleStatus mle_bench_step(const struct MleScenario *scenario,
                              const struct MleArxModel *model,
                              double *error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLE_H */
