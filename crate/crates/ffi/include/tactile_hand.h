#ifndef TACTILE_HAND_H
#define TACTILE_HAND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ThCondition {
  TH_CONDITION_STANDARD = 0,
  TH_CONDITION_TACTILE = 1,
} ThCondition;

typedef enum ThContactSide {
  TH_CONTACT_SIDE_NONE = 0,
  TH_CONTACT_SIDE_PALMAR = 1,
  TH_CONTACT_SIDE_DORSAL = 2,
} ThContactSide;

typedef enum ThObjectStatus {
  TH_OBJECT_STATUS_IN_START_BIN = 0,
  TH_OBJECT_STATUS_HELD = 1,
  TH_OBJECT_STATUS_SLIPPING = 2,
  TH_OBJECT_STATUS_FREE_FALL = 3,
  TH_OBJECT_STATUS_SETTLED_OUT = 4,
  TH_OBJECT_STATUS_IN_END_BIN = 5,
  TH_OBJECT_STATUS_EJECTED = 6,
} ThObjectStatus;

/**
 * Trial outcome; `Running` while the trial is in progress.
 */
typedef enum ThOutcome {
  TH_OUTCOME_RUNNING = 0,
  TH_OUTCOME_COMPLETED = 1,
  TH_OUTCOME_TIMEOUT = 2,
  TH_OUTCOME_ABORTED = 3,
} ThOutcome;

typedef enum ThStatus {
  TH_STATUS_OK = 0,
  TH_STATUS_NULL_POINTER = 1,
  TH_STATUS_INVALID_UTF8 = 2,
  TH_STATUS_INVALID_ARGUMENT = 3,
  TH_STATUS_PARSE = 4,
  TH_STATUS_IO = 5,
  TH_STATUS_FINISHED = 6,
  TH_STATUS_PANIC = 7,
} ThStatus;

/**
 * A live trial driven one tick at a time.
 */
typedef struct ThEngine ThEngine;

/**
 * State after one tick. `x` is NaN when nothing is touched.
 */
typedef struct ThTickState {
  uint64_t tick;
  double u_c;
  double u_o;
  double voltage;
  double aperture;
  double grip_force;
  double p;
  enum ThContactSide side;
  double x;
  double tactor_current;
  double carrier_f;
  double d;
  double h;
  enum ThObjectStatus status;
  bool grasped;
  enum ThOutcome outcome;
} ThTickState;

typedef struct ThTrialSummary {
  enum ThOutcome outcome;
  double score;
  double time_remaining;
  double trial_time;
  uint32_t exploration_contacts;
  double exploration_contact_rate;
  uint32_t fast_slips;
  double fast_slip_rate;
  bool dropped;
  enum ThObjectStatus final_status;
} ThTrialSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *th_last_error_message(void);

/**
 * Control rate in Hz.
 */
uint32_t th_tick_rate_hz(void);

/**
 * Closing/opening commands from normalized activations.
 *
 * # Safety
 * `u_c` and `u_o` must be valid for writes.
 */
enum ThStatus th_volitional(double s_f, double s_x, double *u_c, double *u_o);

/**
 * Closing command after over-grasp modulation.
 */
double th_overgrasp(double u_c, double p, double k, double p_g, bool palmar);

/**
 * Start a live trial. `config_json` may be null for defaults. A
 * non-positive `time_limit_s` selects the default limit.
 *
 * # Safety
 * `config_json` must be null or a valid string; `out` must be valid for writes.
 */
enum ThStatus th_engine_new(const char *config_json,
                            enum ThCondition condition,
                            uint64_t seed,
                            double time_limit_s,
                            struct ThEngine **out);

/**
 * Run one tick with the given intent and wrist velocity (m/s).
 *
 * # Safety
 * `engine` must come from [`th_engine_new`]; `out` may be null.
 */
enum ThStatus th_engine_step(struct ThEngine *engine,
                             double flexion,
                             double extension,
                             double vx,
                             double vy,
                             double vz,
                             bool rezero,
                             struct ThTickState *out);

/**
 * Abort the trial if it is still running.
 *
 * # Safety
 * `engine` must come from [`th_engine_new`].
 */
enum ThStatus th_engine_abort(struct ThEngine *engine);

/**
 * Close the trial, optionally write its logs into `log_dir`, fill `out`
 * and release the handle. The handle is released even on failure.
 *
 * # Safety
 * `engine` must come from [`th_engine_new`] and is invalid afterwards;
 * `log_dir` may be null; `out` may be null.
 */
enum ThStatus th_engine_finish(struct ThEngine *engine,
                               const char *log_dir,
                               struct ThTrialSummary *out);

/**
 * Release a handle without recording anything. Null is ignored.
 *
 * # Safety
 * `engine` must be null or come from [`th_engine_new`].
 */
void th_engine_free(struct ThEngine *engine);

/**
 * Run a scenario file to completion.
 *
 * # Safety
 * `scenario_path` must be a valid string; `config_json` and `log_dir` may be
 * null; `out` must be valid for writes.
 */
enum ThStatus th_run_scenario(const char *scenario_path,
                              const char *config_json,
                              enum ThCondition condition,
                              uint64_t seed,
                              const char *log_dir,
                              struct ThTrialSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TACTILE_HAND_H */
