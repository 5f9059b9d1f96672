#ifndef PHLAB_H
#define PHLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum PhlabFamily {
  PHLAB_FAMILY_LINEAR = 0,
  PHLAB_FAMILY_PERTURBED = 1,
  PHLAB_FAMILY_CONJUGATED = 2,
} PhlabFamily;

typedef enum PhlabFormat {
  PHLAB_FORMAT_JSON = 0,
  PHLAB_FORMAT_CSV = 1,
} PhlabFormat;

typedef enum PhlabStatus {
  PHLAB_STATUS_OK = 0,
  PHLAB_STATUS_NULL_POINTER = 1,
  PHLAB_STATUS_INVALID_INPUT = 2,
  PHLAB_STATUS_NOT_PARTIALLY_HYPERBOLIC = 3,
  PHLAB_STATUS_NOT_CERTIFIED = 4,
  PHLAB_STATUS_CONFIG_INVALID = 5,
  PHLAB_STATUS_NUMERICAL = 6,
  PHLAB_STATUS_IO = 7,
  PHLAB_STATUS_BUFFER_TOO_SMALL = 8,
  PHLAB_STATUS_PANIC = 9,
} PhlabStatus;

/**
 * Opaque model handle.
 */
typedef struct PhlabModel PhlabModel;

/**
 * Opaque report handle.
 */
typedef struct PhlabReport PhlabReport;

/**
 * `amplitude * sin(2 pi k.x + phase)`.
 */
typedef struct PhlabMode {
  int64_t k[3];
  double amplitude[3];
  double phase;
} PhlabMode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *phlab_version(void);

/**
 * Message of the last failed call on this thread (empty after a success).
 *
 * # Safety
 * `buf` must hold `len` bytes or be null; `required` may be null.
 */
enum PhlabStatus phlab_last_error(char *buf, size_t len, size_t *required);

/**
 * Writes the `Classification` code of a row-major matrix: 0 PH_ANOSOV,
 * 1 ANOSOV_NON_PH, 2 NOT_ANOSOV, 3 NOT_UNIMODULAR.
 *
 * # Safety
 * `matrix` must point to 9 integers and `out` to one.
 */
enum PhlabStatus phlab_classify(const int64_t *matrix, int32_t *out);

/**
 * Builds a model. `modes` may be null when `n_modes` is 0.
 *
 * # Safety
 * `matrix` must point to 9 integers, `modes` to `n_modes` entries and `out` to a handle slot.
 */
enum PhlabStatus phlab_model_new(const int64_t *matrix,
                                 enum PhlabFamily family,
                                 const struct PhlabMode *modes,
                                 size_t n_modes,
                                 double epsilon,
                                 struct PhlabModel **out);

/**
 * # Safety
 * `model` must come from [`phlab_model_new`] and not be used afterwards; null is ignored.
 */
void phlab_model_free(struct PhlabModel *model);

/**
 * Ascending eigenvalues of the base automorphism.
 *
 * # Safety
 * `out` must hold 3 doubles.
 */
enum PhlabStatus phlab_model_eigenvalues(const struct PhlabModel *model, double *out);

/**
 * Map on the universal cover.
 *
 * # Safety
 * `x` and `out` must hold 3 doubles.
 */
enum PhlabStatus phlab_model_eval(const struct PhlabModel *model, const double *x, double *out);

/**
 * Spread of periodic center multipliers over minimal periods `1..=n_max`.
 *
 * # Safety
 * `dispersion` and `orbit_count` must be valid; `orbit_count` may be null.
 */
enum PhlabStatus phlab_spectrum(const struct PhlabModel *model,
                                size_t n_max,
                                double *dispersion,
                                size_t *orbit_count);

/**
 * su-closure defect at `x` with leg lengths `l_s`, `l_u` and the default trace step.
 *
 * # Safety
 * `x` must hold 3 doubles and `out` one.
 */
enum PhlabStatus phlab_su_defect(const struct PhlabModel *model,
                                 const double *x,
                                 double l_s,
                                 double l_u,
                                 double *out);

/**
 * Parses a JSON experiment config and runs it.
 *
 * # Safety
 * `config_json` must be a NUL-terminated UTF-8 string and `out` a handle slot.
 */
enum PhlabStatus phlab_report_run(const char *config_json, struct PhlabReport **out);

/**
 * Serializes a report. Call with a null buffer to learn the size in `required`.
 *
 * # Safety
 * `buf` must hold `len` bytes or be null; `required` may be null.
 */
enum PhlabStatus phlab_report_render(const struct PhlabReport *report,
                                     enum PhlabFormat format,
                                     char *buf,
                                     size_t len,
                                     size_t *required);

/**
 * Coherence of the report; NaN when no cell carries a verdict.
 *
 * # Safety
 * `out` must point to one double.
 */
enum PhlabStatus phlab_report_coherence(const struct PhlabReport *report, double *out);

/**
 * Number of sweep cells in the report.
 *
 * # Safety
 * `out` must point to one `size_t`.
 */
enum PhlabStatus phlab_report_cells(const struct PhlabReport *report, size_t *out);

/**
 * # Safety
 * `report` must come from [`phlab_report_run`] and not be used afterwards; null is ignored.
 */
void phlab_report_free(struct PhlabReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHLAB_H */
