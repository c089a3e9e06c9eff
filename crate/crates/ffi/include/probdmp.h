#ifndef PROBDMP_H
#define PROBDMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum PdmpStatus {
  PDMP_STATUS_OK = 0,
  PDMP_STATUS_NULL_POINTER = 1,
  PDMP_STATUS_INVALID_ARGUMENT = 2,
  PDMP_STATUS_INVALID_MODEL = 3,
  PDMP_STATUS_DIMENSION_MISMATCH = 4,
  PDMP_STATUS_IO = 5,
  PDMP_STATUS_PARSE = 6,
  PDMP_STATUS_NOT_CALIBRATED = 7,
  PDMP_STATUS_INTERNAL = 8,
} PdmpStatus;

/*
 A streaming execution of a model.
 */
typedef struct PdmpExecutor PdmpExecutor;

/*
 A learned primitive.
 */
typedef struct PdmpModel PdmpModel;

/*
 Outcome of [`pdmp_classify`].
 */
typedef struct PdmpClassification {
  /*
   1 when the execution is classified as failed.
   */
  int32_t failed;
  /*
   First failing step, or -1.
   */
  int64_t failure_step;
  double min_score;
  double threshold;
} PdmpClassification;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length plus one, or 0 when
 no error has been recorded.

 # Safety
 `buf` must be NULL or point to `len` writable bytes.
 */
size_t pdmp_last_error_message(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *pdmp_version(void);

/*
 Parses a model from its JSON document.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum PdmpStatus pdmp_model_from_json(const char *json, struct PdmpModel **out);

/*
 Loads a model JSON file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PdmpStatus pdmp_model_load(const char *path, struct PdmpModel **out);

/*
 Serializes a model; release the string with [`pdmp_string_free`].

 # Safety
 `model` must come from this library; `out` must be writable.
 */
enum PdmpStatus pdmp_model_to_json(const struct PdmpModel *model, char **out);

/*
 # Safety
 `s` must be NULL or a string returned by this library.
 */
void pdmp_string_free(char *s);

/*
 # Safety
 `model` must be NULL or a handle from this library, not used afterwards.
 */
void pdmp_model_free(struct PdmpModel *model);

/*
 Number of DOFs, fitted length and time step of a model.

 # Safety
 `model` must come from this library; each output must be NULL or writable.
 */
enum PdmpStatus pdmp_model_info(const struct PdmpModel *model,
                                size_t *n_dofs,
                                size_t *n_steps,
                                double *dt);

/*
 Calibrated failure threshold.

 # Safety
 `model` must come from this library; `out` must be writable.
 */
enum PdmpStatus pdmp_model_threshold(const struct PdmpModel *model, double *out);

/*
 Open-loop rollout. `start`/`goal` may be NULL for the fitted values.
 Writes `n_steps x n_dofs` position means and, if `std_out` is not NULL,
 position standard deviations.

 # Safety
 Non-NULL `start`/`goal` hold `n_dofs` values; `mean_out` (and `std_out`)
 hold `n_steps * n_dofs` writable values.
 */
enum PdmpStatus pdmp_rollout(const struct PdmpModel *model,
                             const double *start,
                             const double *goal,
                             size_t n_dofs,
                             size_t n_steps,
                             double *mean_out,
                             double *std_out);

/*
 Starts a streaming execution. The executor keeps the model alive, so the
 model handle may be freed first.

 # Safety
 As for [`pdmp_rollout`]; `out` must be writable.
 */
enum PdmpStatus pdmp_executor_new(const struct PdmpModel *model,
                                  const double *start,
                                  const double *goal,
                                  size_t n_dofs,
                                  struct PdmpExecutor **out);

/*
 Feeds the observation of the next step (`observation` NULL when the
 sensor reading is missing). Writes the filtered position means and stds
 (each `n_dofs`, optional) and the step's predictive log-likelihood (NaN
 for a missing observation).

 # Safety
 `executor` must come from this library; non-NULL buffers hold `n_dofs`
 values.
 */
enum PdmpStatus pdmp_executor_step(struct PdmpExecutor *executor,
                                   const double *observation,
                                   size_t n_dofs,
                                   double *mean_out,
                                   double *std_out,
                                   double *loglik_out);

/*
 Predicted (feedback-modulated) position for the next step.

 # Safety
 `executor` must come from this library; `mean_out` holds `n_dofs` values.
 */
enum PdmpStatus pdmp_executor_desired_next(const struct PdmpExecutor *executor,
                                           size_t n_dofs,
                                           double *mean_out);

/*
 # Safety
 `executor` must be NULL or a handle from this library, not used afterwards.
 */
void pdmp_executor_free(struct PdmpExecutor *executor);

/*
 Classifies a recorded execution (`n_steps x n_dofs` positions) with the
 model's calibrated threshold. `start` and `goal` are the intended end
 points; a NULL one is taken from the recording itself, which is only
 right when the execution reached its target. `loglik_out` may be NULL or
 receive `n_steps` per-step log-likelihoods.

 # Safety
 `observations` holds `n_steps * n_dofs` values; non-NULL `start`/`goal`
 hold `n_dofs` values; `result` is writable; non-NULL `loglik_out` holds
 `n_steps` values.
 */
enum PdmpStatus pdmp_classify(const struct PdmpModel *model,
                              const double *observations,
                              const double *start,
                              const double *goal,
                              size_t n_steps,
                              size_t n_dofs,
                              struct PdmpClassification *result,
                              double *loglik_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROBDMP_H */
