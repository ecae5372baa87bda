#ifndef RAMPC_H
#define RAMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  RAMPC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RAMPC_STATUS_NULL_ARGUMENT = 1,
  /**
   * Malformed text, bad dimensions or out-of-range settings.
   */
  RAMPC_STATUS_INVALID_INPUT = 2,
  /**
   * Offline synthesis failed or its artifacts did not validate.
   */
  RAMPC_STATUS_VALIDATION = 3,
  /**
   * The tube QP had no solution.
   */
  RAMPC_STATUS_INFEASIBLE = 4,
  /**
   * No parameter is consistent with the measurements.
   */
  RAMPC_STATUS_FALSIFIED = 5,
  /**
   * Numerical failure inside a solver.
   */
  RAMPC_STATUS_SOLVER = 6,
  /**
   * File or serialization failure.
   */
  RAMPC_STATUS_IO = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  RAMPC_STATUS_PANIC = 8,
} RampcStatus;

/**
 * Validated offline artifacts.
 */
typedef struct RampcArtifacts RampcArtifacts;

/**
 * Online controller with its estimator state.
 */
typedef struct RampcController RampcController;

/**
 * Log of a closed-loop run.
 */
typedef struct RampcRunLog RampcRunLog;

/**
 * A parsed scenario.
 */
typedef struct RampcScenario RampcScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rampc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rampc_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void rampc_string_free(char *s);

/**
 * Parses and validates a TOML scenario.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
RampcStatus rampc_scenario_from_toml(const char *toml, RampcScenario **out);

/**
 * Replaces the seed of the disturbance and noise streams.
 *
 * # Safety
 * `scenario` must be a live handle.
 */
RampcStatus rampc_scenario_set_seed(RampcScenario *scenario, uint64_t seed);

/**
 * # Safety
 * `scenario` must be null or a live handle; it is invalid afterwards.
 */
void rampc_scenario_free(RampcScenario *scenario);

/**
 * Offline synthesis and validation for a scenario.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a writable pointer.
 */
RampcStatus rampc_synthesize(const RampcScenario *scenario, RampcArtifacts **out);

/**
 * Artifacts as JSON; release with [`rampc_string_free`].
 *
 * # Safety
 * `artifacts` must be a live handle and `out` a writable pointer.
 */
RampcStatus rampc_artifacts_to_json(const RampcArtifacts *artifacts, char **out);

/**
 * Loads artifacts previously written by [`rampc_artifacts_to_json`].
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
RampcStatus rampc_artifacts_from_json(const char *json, RampcArtifacts **out);

/**
 * # Safety
 * `artifacts` must be null or a live handle; it is invalid afterwards.
 */
void rampc_artifacts_free(RampcArtifacts *artifacts);

/**
 * Controller for `scenario` using `artifacts`. Both handles may be freed
 * afterwards.
 *
 * # Safety
 * Handles must be live and `out` a writable pointer.
 */
RampcStatus rampc_controller_new(const RampcScenario *scenario,
                                 const RampcArtifacts *artifacts,
                                 RampcController **out);

/**
 * State and input dimensions of the controller.
 *
 * # Safety
 * `controller` must be a live handle; `n` and `m` writable.
 */
RampcStatus rampc_controller_dims(const RampcController *controller, size_t *n, size_t *m);

/**
 * One control step. `measured` and `reference` hold `n` entries (states
 * relative to trim), `u_abs` receives `m` absolute inputs. `flags`, when
 * not null, receives bit 0 for an infeasible QP (a fallback input was
 * returned) and bit 1 for a falsified parameter set.
 *
 * # Safety
 * Buffers must hold the stated number of entries.
 */
RampcStatus rampc_controller_step(RampcController *controller,
                                  const double *measured,
                                  const double *reference,
                                  size_t n,
                                  double *u_abs,
                                  size_t m,
                                  uint32_t *flags);

/**
 * Current parameter interval, `p` entries each.
 *
 * # Safety
 * `lower` and `upper` must hold `p` entries.
 */
RampcStatus rampc_controller_parameter_set(const RampcController *controller,
                                           double *lower,
                                           double *upper,
                                           size_t p);

/**
 * # Safety
 * `controller` must be null or a live handle; it is invalid afterwards.
 */
void rampc_controller_free(RampcController *controller);

/**
 * Simulates the scenario in closed loop.
 *
 * # Safety
 * Handles must be live and `out` a writable pointer.
 */
RampcStatus rampc_run(const RampcScenario *scenario,
                      const RampcArtifacts *artifacts,
                      RampcRunLog **out);

/**
 * Number of recorded steps.
 *
 * # Safety
 * `log` must be a live handle and `steps` writable.
 */
RampcStatus rampc_runlog_steps(const RampcRunLog *log, size_t *steps);

/**
 * Hex SHA-256 of the log without wall-clock times; release with
 * [`rampc_string_free`].
 *
 * # Safety
 * `log` must be a live handle and `out` a writable pointer.
 */
RampcStatus rampc_runlog_hash(const RampcRunLog *log, char **out);

/**
 * The log as JSON; release with [`rampc_string_free`].
 *
 * # Safety
 * `log` must be a live handle and `out` a writable pointer.
 */
RampcStatus rampc_runlog_to_json(const RampcRunLog *log, char **out);

/**
 * # Safety
 * `log` must be null or a live handle; it is invalid afterwards.
 */
void rampc_runlog_free(RampcRunLog *log);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAMPC_H */
