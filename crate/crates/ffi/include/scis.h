#ifndef SCIS_H
#define SCIS_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

/**
 * Number of planned waypoints per scene.
 */
#define SCIS_HORIZON 6

typedef enum ScisSplit {
  SCIS_SPLIT_TRAIN = 0,
  SCIS_SPLIT_VAL = 1,
} ScisSplit;

typedef enum ScisStatus {
  SCIS_STATUS_OK = 0,
  SCIS_STATUS_NULL_ARGUMENT = 1,
  SCIS_STATUS_INVALID_UTF8 = 2,
  SCIS_STATUS_BUFFER_TOO_SMALL = 3,
  SCIS_STATUS_OUT_OF_RANGE = 4,
  SCIS_STATUS_SHAPE = 10,
  SCIS_STATUS_CONTRACT = 11,
  SCIS_STATUS_UNKNOWN_NODE = 12,
  SCIS_STATUS_GRAPH = 13,
  SCIS_STATUS_UNDEFINED_CONDITIONAL = 14,
  SCIS_STATUS_CAPACITY = 15,
  SCIS_STATUS_CONFIG = 16,
  SCIS_STATUS_MISUSE = 17,
  SCIS_STATUS_WIRING = 18,
  SCIS_STATUS_TRAINING = 19,
  SCIS_STATUS_HASH_MISMATCH = 20,
  SCIS_STATUS_INVALID = 21,
  SCIS_STATUS_IO = 22,
  SCIS_STATUS_JSON = 23,
  SCIS_STATUS_PANIC = 99,
} ScisStatus;

/**
 * A generated or loaded scene dataset.
 */
typedef struct ScisDataset ScisDataset;

/**
 * A trained planner, with its dictionary when it is causal.
 */
typedef struct ScisModel ScisModel;

/**
 * A discrete structural causal model.
 */
typedef struct ScisScm ScisScm;

/**
 * Aggregate open-loop metrics of one evaluation.
 */
typedef struct ScisMetrics {
  size_t scenes;
  double l2_1s;
  double l2_2s;
  double l2_3s;
  double l2_avg;
  double collision_rate;
} ScisMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *scis_version(void);

/**
 * Length in bytes of the calling thread's last error message, without the
 * terminating NUL; 0 when the last call succeeded.
 */
size_t scis_last_error_length(void);

/**
 * Copies the last error message, NUL-terminated, into `buf`.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes.
 */
enum ScisStatus scis_last_error_message(char *buf, size_t cap);

/**
 * The three-node confounded fixture `Z -> S -> Y`, `Z -> Y`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ScisStatus scis_scm_confounded_triple(struct ScisScm **out);

/**
 * Parses an SCM from its JSON text form.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be a valid pointer.
 */
enum ScisStatus scis_scm_from_json(const char *json, struct ScisScm **out);

/**
 * # Safety
 * `scm` must come from this library and not be used afterwards.
 */
void scis_scm_free(struct ScisScm *scm);

/**
 * Number of states of variable `name`.
 *
 * # Safety
 * Pointers must be valid; `name` NUL-terminated.
 */
enum ScisStatus scis_scm_card(const struct ScisScm *scm, const char *name, size_t *out);

/**
 * `P(y | names = states)`. Writes `card(y)` probabilities to `probs`.
 *
 * # Safety
 * `names` and `states` must hold `n` entries; `probs` must hold `cap`.
 */
enum ScisStatus scis_scm_observational(const struct ScisScm *scm,
                                       const char *y,
                                       const char *const *names,
                                       const size_t *states,
                                       size_t n,
                                       double *probs,
                                       size_t cap,
                                       size_t *out_len);

/**
 * `P(y | do(names = states))` by truncated factorization.
 *
 * # Safety
 * As for [`scis_scm_observational`].
 */
enum ScisStatus scis_scm_interventional(const struct ScisScm *scm,
                                        const char *y,
                                        const char *const *names,
                                        const size_t *states,
                                        size_t n,
                                        double *probs,
                                        size_t cap,
                                        size_t *out_len);

/**
 * `sum_z P(y | s, z) P(z)` over the adjustment set `z`.
 *
 * # Safety
 * `z` must hold `n_z` NUL-terminated names; `probs` must hold `cap`.
 */
enum ScisStatus scis_scm_backdoor_adjust(const struct ScisScm *scm,
                                         const char *y,
                                         const char *s,
                                         size_t s_state,
                                         const char *const *z,
                                         size_t n_z,
                                         double *probs,
                                         size_t cap,
                                         size_t *out_len);

/**
 * Samples `n` scenes with the default scenario configuration and `seed`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ScisStatus scis_dataset_generate(uint64_t seed,
                                      size_t n,
                                      enum ScisSplit split,
                                      struct ScisDataset **out);

/**
 * Loads a dataset written by the CLI `generate` command.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be a valid pointer.
 */
enum ScisStatus scis_dataset_load(const char *path, struct ScisDataset **out);

/**
 * # Safety
 * `data` must be a valid handle.
 */
enum ScisStatus scis_dataset_len(const struct ScisDataset *data, size_t *out);

/**
 * # Safety
 * `data` must come from this library and not be used afterwards.
 */
void scis_dataset_free(struct ScisDataset *data);

/**
 * Loads a model checkpoint. `dict_path` may be NULL for a baseline; a
 * causal checkpoint needs its dictionary.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be a valid pointer.
 */
enum ScisStatus scis_model_load(const char *model_path,
                                const char *dict_path,
                                struct ScisModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void scis_model_free(struct ScisModel *model);

/**
 * # Safety
 * Pointers must be valid.
 */
enum ScisStatus scis_model_is_causal(const struct ScisModel *model, bool *out);

/**
 * Plans scene `index` of `data`. Writes `2 * SCIS_HORIZON` values, `x`
 * and `y` interleaved, in the ego frame.
 *
 * # Safety
 * Handles must be valid; `xy` must hold `cap` values.
 */
enum ScisStatus scis_model_predict(const struct ScisModel *model,
                                   const struct ScisDataset *data,
                                   size_t index,
                                   double *xy,
                                   size_t cap,
                                   size_t *out_len);

/**
 * Open-loop L2 and collision rate of `model` on `data`.
 *
 * # Safety
 * Handles and `out` must be valid.
 */
enum ScisStatus scis_model_evaluate(const struct ScisModel *model,
                                    const struct ScisDataset *data,
                                    uint64_t seed,
                                    struct ScisMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCIS_H */
