#ifndef MDCORNER_H
#define MDCORNER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MdcStatus {
  MDC_STATUS_OK = 0,
  MDC_STATUS_NULL_POINTER = 1,
  MDC_STATUS_INVALID_ARGUMENT = 2,
  MDC_STATUS_CONFIG = 3,
  MDC_STATUS_IO = 4,
  MDC_STATUS_FORMAT = 5,
  MDC_STATUS_NUMERICAL = 6,
  MDC_STATUS_CARDINALITY = 7,
  MDC_STATUS_LABEL = 8,
  MDC_STATUS_PANIC = 9,
  MDC_STATUS_OTHER = 10,
} MdcStatus;

/**
 * Fused corner cloud, `points x 3`.
 */
typedef struct MdcCloud MdcCloud;

/**
 * Pipeline configuration.
 */
typedef struct MdcConfig MdcConfig;

/**
 * Simulated complex echo.
 */
typedef struct MdcEcho MdcEcho;

/**
 * Trained classifier.
 */
typedef struct MdcModel MdcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 * Valid until the next call on the same thread.
 */
const char *mdc_last_error(void);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum MdcStatus mdc_config_default(struct MdcConfig **out);

/**
 * Defaults overlaid with a JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be valid.
 */
enum MdcStatus mdc_config_from_json(const char *json, struct MdcConfig **out);

/**
 * Serializes a configuration; release the string with [`mdc_string_free`].
 *
 * # Safety
 * `cfg` must come from this library; `out` must be valid.
 */
enum MdcStatus mdc_config_to_json(const struct MdcConfig *cfg, char **out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void mdc_string_free(char *s);

/**
 * # Safety
 * `cfg` must come from this library or be null.
 */
void mdc_config_free(struct MdcConfig *cfg);

/**
 * Simulates one echo of `class_index` (0..12) with the configured radar
 * and scene.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be valid.
 */
enum MdcStatus mdc_simulate(const struct MdcConfig *cfg,
                            uint32_t class_index,
                            double height_m,
                            uint64_t seed,
                            struct MdcEcho **out);

/**
 * Fast-time samples and pulses of an echo.
 *
 * # Safety
 * All pointers must be valid.
 */
enum MdcStatus mdc_echo_dims(const struct MdcEcho *echo, size_t *rows, size_t *cols);

/**
 * # Safety
 * `echo` must come from this library or be null.
 */
void mdc_echo_free(struct MdcEcho *echo);

/**
 * Maps, corners and fusion for one echo.
 *
 * # Safety
 * `cfg` and `echo` must come from this library; `out` must be valid.
 */
enum MdcStatus mdc_echo_to_cloud(const struct MdcConfig *cfg,
                                 const struct MdcEcho *echo,
                                 struct MdcCloud **out);

/**
 * Number of points in a cloud (0 for null).
 *
 * # Safety
 * `cloud` must come from this library or be null.
 */
size_t mdc_cloud_len(const struct MdcCloud *cloud);

/**
 * Copies the cloud row-major into `buf`, which holds `len` doubles
 * (at least `3 * points`).
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum MdcStatus mdc_cloud_copy(const struct MdcCloud *cloud, double *buf, size_t len);

/**
 * # Safety
 * `cloud` must come from this library or be null.
 */
void mdc_cloud_free(struct MdcCloud *cloud);

/**
 * Loads a model directory written by training.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be valid.
 */
enum MdcStatus mdc_model_load(const char *dir, struct MdcModel **out);

/**
 * Classifies `n_points x 3` row-major points. Writes the label and, when
 * `probs` is non-null, `n_probs` class probabilities.
 *
 * # Safety
 * `points` must hold `3 * n_points` doubles and `probs` (if non-null)
 * `n_probs` doubles.
 */
enum MdcStatus mdc_model_predict(const struct MdcModel *model,
                                 const double *points,
                                 size_t n_points,
                                 uint32_t *label,
                                 double *probs,
                                 size_t n_probs);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void mdc_model_free(struct MdcModel *model);

/**
 * Runs every stage into `dir`.
 *
 * # Safety
 * `cfg` must come from this library; `dir` must be a NUL-terminated path.
 */
enum MdcStatus mdc_run_pipeline(const struct MdcConfig *cfg, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDCORNER_H */
