#ifndef LADAR_TRACK_H
#define LADAR_TRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of an API call.
 */
typedef enum LtStatus {
  LT_STATUS_OK = 0,
  LT_STATUS_NULL_POINTER = 1,
  LT_STATUS_INVALID_ARGUMENT = 2,
  LT_STATUS_FIT_FAILURE = 3,
  LT_STATUS_DEGENERATE = 4,
  LT_STATUS_SINGULAR = 5,
  LT_STATUS_CONFIG = 6,
  LT_STATUS_DATA = 7,
  LT_STATUS_IO = 8,
  LT_STATUS_OUT_OF_RANGE = 9,
  LT_STATUS_PANIC = 10,
} LtStatus;

/**
 * Motion model of a hypothesis.
 */
typedef enum LtModel {
  LT_MODEL_ISM = 0,
  LT_MODEL_VASM = 1,
} LtModel;

/**
 * Opaque tracker handle.
 */
typedef struct LtTracker LtTracker;

typedef struct LtPose {
  double x;
  double y;
  double theta;
} LtPose;

/**
 * Summary of one track's selected hypothesis.
 */
typedef struct LtTrack {
  uint64_t id;
  enum LtModel model;
  struct LtPose pose;
  double vx;
  double vy;
  double length;
  double width;
  /**
   * Number of hypotheses held for the object.
   */
  uint32_t hypotheses;
  /**
   * Windowed mean NIS, NaN before the first update.
   */
  double score;
  /**
   * Number of predicted poses available from [`lt_tracker_prediction`].
   */
  uint32_t prediction_len;
} LtTrack;

/**
 * Arc-model state: center `(x, y)`, axle offset `l`, axle speed `v`,
 * heading and turn rate.
 */
typedef struct LtVasmState {
  double x;
  double y;
  double l;
  double v;
  double theta;
  double thetadot;
} LtVasmState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lt_last_error(char *buf, size_t len);

/**
 * Static description of a status code.
 */
const char *lt_status_str(enum LtStatus status);

/**
 * Creates a tracker. `config_toml` may be null for the default
 * configuration, or a TOML document overriding any subset of the keys.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum LtStatus lt_tracker_new(const char *config_toml, struct LtTracker **out);

/**
 * Releases a tracker. Null is ignored.
 *
 * # Safety
 * `tracker` must be null or a handle from [`lt_tracker_new`] not yet freed.
 */
void lt_tracker_free(struct LtTracker *tracker);

/**
 * Processes one scan. `xy` holds `n_points` interleaved world-frame
 * coordinates; `sensor` is the scanner pose. Timestamps must increase.
 *
 * # Safety
 * `tracker` must be a live handle, `xy` must point to `2 * n_points`
 * doubles (or be null when `n_points` is 0).
 */
enum LtStatus lt_tracker_step(struct LtTracker *tracker,
                              const double *xy,
                              size_t n_points,
                              struct LtPose sensor,
                              double timestamp);

/**
 * Number of tracks reported by the last step.
 *
 * # Safety
 * `tracker` must be a live handle and `count` a valid pointer.
 */
enum LtStatus lt_tracker_track_count(const struct LtTracker *tracker, size_t *count);

/**
 * Selected hypothesis of track `index` from the last step.
 *
 * # Safety
 * `tracker` must be a live handle and `out` a valid pointer.
 */
enum LtStatus lt_tracker_track(const struct LtTracker *tracker, size_t index, struct LtTrack *out);

/**
 * Copies up to `cap` predicted center poses of track `index` into `poses`
 * and stores the number written in `written`.
 *
 * # Safety
 * `tracker` must be a live handle, `poses` must point to `cap` writable
 * elements (or be null when `cap` is 0) and `written` must be valid.
 */
enum LtStatus lt_tracker_prediction(const struct LtTracker *tracker,
                                    size_t index,
                                    struct LtPose *poses,
                                    size_t cap,
                                    size_t *written);

/**
 * Closed-form arc propagation of an arc-model state over `dt` seconds.
 *
 * # Safety
 * `state` and `out` must be valid pointers.
 */
enum LtStatus lt_vasm_propagate(const struct LtVasmState *state,
                                double dt,
                                struct LtVasmState *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LADAR_TRACK_H */
