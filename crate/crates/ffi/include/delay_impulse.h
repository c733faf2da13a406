#ifndef DELAY_IMPULSE_H
#define DELAY_IMPULSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Solver selection for [`dip_solve`].
 */
typedef enum {
  DIP_MODE_RISK_NEUTRAL = 0,
  DIP_MODE_RISK_SENSITIVE = 1,
  DIP_MODE_INFINITE = 2,
} DipMode;

/**
 * Result code of every fallible call.
 */
typedef enum {
  DIP_STATUS_OK = 0,
  DIP_STATUS_NULL_POINTER = 1,
  DIP_STATUS_INVALID_UTF8 = 2,
  DIP_STATUS_CONFIG_ERROR = 3,
  DIP_STATUS_SOLVER_ERROR = 4,
  DIP_STATUS_OUT_OF_RANGE = 5,
  DIP_STATUS_PANIC = 6,
} DipStatus;

/**
 * A parsed and validated model file.
 */
typedef struct DipModel DipModel;

/**
 * The outcome of [`dip_solve`].
 */
typedef struct DipReport DipReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a model JSON document into a new handle written to `*out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
DipStatus dip_model_from_json(const char *json, DipModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dip_model_from_json`] and not be freed twice.
 */
void dip_model_free(DipModel *model);

/**
 * Number of Markov states of a model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
DipStatus dip_model_states(const DipModel *model, size_t *out);

/**
 * Solves a model. `epsilon` and `t_max` only apply to the infinite mode;
 * pass a non-positive value to keep the model's own setting.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
DipStatus dip_solve(const DipModel *model,
                    DipMode mode,
                    double epsilon,
                    double t_max,
                    DipReport **out);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from [`dip_solve`] and not be freed twice.
 */
void dip_report_free(DipReport *report);

/**
 * Optimal value at the initial condition.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
DipStatus dip_report_value(const DipReport *report, double *out);

/**
 * Number of entries in the per-level value list.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
DipStatus dip_report_levels(const DipReport *report, size_t *out);

/**
 * Value with at most `level` impulses (iterate `level` in the infinite mode).
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
DipStatus dip_report_level_value(const DipReport *report, size_t level, double *out);

/**
 * The report summary as JSON, written to `*out`.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
DipStatus dip_report_to_json(const DipReport *report, char **out);

/**
 * The decision rule in `strategy.csv` format, written to `*out`.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
DipStatus dip_report_strategy_csv(const DipReport *report, char **out);

/**
 * Prices a swing contract given as JSON.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `price` a valid pointer.
 */
DipStatus dip_price_swing_json(const char *json, double *price);

/**
 * Copy of the last error message on this thread, or null if there is none.
 * Release it with [`dip_string_free`].
 */
char *dip_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void dip_string_free(char *s);

/**
 * Library version, a static NUL-terminated string.
 */
const char *dip_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELAY_IMPULSE_H */
