#ifndef BRIHMM_H
#define BRIHMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bumped on any incompatible change to the exported signatures or structs.
 */
#define BRIHMM_ABI_VERSION 1

typedef enum BrihmmStatus {
  BRIHMM_STATUS_OK = 0,
  BRIHMM_STATUS_NULL_POINTER = 1,
  BRIHMM_STATUS_INVALID_ARGUMENT = 2,
  BRIHMM_STATUS_CONFIG = 3,
  BRIHMM_STATUS_NUMERICAL = 4,
  /**
   * No completed tick is waiting.
   */
  BRIHMM_STATUS_EMPTY = 5,
  BRIHMM_STATUS_PANIC = 6,
} BrihmmStatus;

/**
 * Opaque engine handle.
 */
typedef struct BrihmmEngine BrihmmEngine;

/**
 * Scalar part of one completed tick. The predictive mean and covariance are
 * copied into caller buffers by [`brihmm_engine_next_result`].
 */
typedef struct BrihmmStep {
  uint64_t tick;
  uint64_t map_state;
  double ess;
  uint8_t resampled;
  double num_active_states;
} BrihmmStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t brihmm_abi_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *brihmm_last_error(void);

void brihmm_clear_error(void);

/**
 * Create an engine from a JSON filter configuration.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BrihmmStatus brihmm_engine_new(const char *config_json,
                                    size_t param_dim,
                                    size_t obs_dim,
                                    struct BrihmmEngine **out);

/**
 * # Safety
 * `engine` must come from [`brihmm_engine_new`] and not be used afterwards.
 */
void brihmm_engine_free(struct BrihmmEngine *engine);

/**
 * One-step-ahead predictive for the next tick, given its `obs_dim x
 * param_dim` row-major feature matrix. Writes `obs_dim` means and the
 * `obs_dim x obs_dim` covariance (row-major); either output may be null.
 *
 * # Safety
 * Pointers must reference buffers of the sizes above.
 */
enum BrihmmStatus brihmm_engine_predict(const struct BrihmmEngine *engine,
                                        const double *feature,
                                        double *out_mean,
                                        double *out_cov);

/**
 * Feed one observation. Completed ticks are queued; `out_ready` (optional)
 * receives the queue length afterwards.
 *
 * # Safety
 * `feature` holds `obs_dim * param_dim` values, `y` holds `obs_dim`.
 */
enum BrihmmStatus brihmm_engine_observe(struct BrihmmEngine *engine,
                                        const double *feature,
                                        const double *y,
                                        size_t *out_ready);

/**
 * Process a partially filled batch.
 *
 * # Safety
 * `engine` must be a live handle; `out_ready` may be null.
 */
enum BrihmmStatus brihmm_engine_flush(struct BrihmmEngine *engine, size_t *out_ready);

/**
 * Pop the oldest completed tick. Returns [`BrihmmStatus::Empty`] when none is
 * queued. `out_mean` / `out_cov` are sized as in [`brihmm_engine_predict`]
 * and may be null.
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum BrihmmStatus brihmm_engine_next_result(struct BrihmmEngine *engine,
                                            struct BrihmmStep *out,
                                            double *out_mean,
                                            double *out_cov);

/**
 * Observations buffered towards the current batch.
 *
 * # Safety
 * `engine` must be a live handle or null (returns 0).
 */
size_t brihmm_engine_pending(const struct BrihmmEngine *engine);

/**
 * Ticks consumed so far.
 *
 * # Safety
 * `engine` must be a live handle or null (returns 0).
 */
uint64_t brihmm_engine_tick(const struct BrihmmEngine *engine);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRIHMM_H */
