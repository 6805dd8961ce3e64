#ifndef DRIFTSAFE_H
#define DRIFTSAFE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_DOMAIN = 2,
  DS_STATUS_DIMENSION = 3,
  DS_STATUS_NOT_PSD = 4,
  DS_STATUS_SINGULAR_TRANSFER = 5,
  DS_STATUS_DEGENERATE = 6,
  DS_STATUS_INFEASIBLE = 7,
  DS_STATUS_NUMERICAL = 8,
  DS_STATUS_SCHEMA = 9,
  DS_STATUS_IO = 10,
  /**
   * Caller buffer too small; the required length is reported.
   */
  DS_STATUS_BUFFER_TOO_SMALL = 11,
  DS_STATUS_PANIC = 12,
} DsStatus;

/**
 * Dispersion analysis mode.
 */
typedef enum {
  DS_UQ_MODE_LINCOV = 0,
  DS_UQ_MODE_HYBRID = 1,
  DS_UQ_MODE_MONTE_CARLO = 2,
} DsUqMode;

/**
 * Dispersion analysis result.
 */
typedef struct DsDispersion DsDispersion;

/**
 * Orbit of the target.
 */
typedef struct DsOrbit DsOrbit;

/**
 * Impulsive maneuver plan.
 */
typedef struct DsPlan DsPlan;

/**
 * Resolved scenario.
 */
typedef struct DsScenario DsScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the calling thread's last error message into `buf`, NUL
 * terminated and truncated to `len`. Returns the full message length
 * excluding the terminator, or 0 when there is none.
 *
 * # Safety
 * `buf` must be NULL or valid for `len` bytes.
 */
size_t ds_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ds_version(void);

/**
 * Orbit from its mean motion, rad/s.
 *
 * # Safety
 * `orbit` must be valid for a pointer write.
 */
DsStatus ds_orbit_new(double mean_motion, DsOrbit **orbit);

/**
 * Circular orbit of semimajor axis `a` (m) about a body of parameter `mu` (m³/s²).
 *
 * # Safety
 * `orbit` must be valid for a pointer write.
 */
DsStatus ds_orbit_from_semimajor_axis(double a, double mu, DsOrbit **orbit);

/**
 * # Safety
 * `orbit` must be NULL or a handle from this library, freed once.
 */
void ds_orbit_free(DsOrbit *orbit);

/**
 * # Safety
 * `orbit` must be a live handle and `n` valid for a write.
 */
DsStatus ds_orbit_mean_motion(const DsOrbit *orbit, double *n);

/**
 * State transition matrix over `dt` seconds, row-major. `full` selects the
 * 6×6 form (36 doubles) over the planar 4×4 one (16 doubles).
 *
 * # Safety
 * `orbit` must be a live handle and `phi` valid for `cap` doubles.
 */
DsStatus ds_stm(const DsOrbit *orbit, double dt, bool full, double *phi, size_t cap);

/**
 * Propagate a state of `dim` (4 or 6) components by `dt` seconds, then add
 * `dv` (NULL for none; 2 or 3 components to match `dim`).
 *
 * # Safety
 * `state` and `result` must be valid for `dim` doubles, `dv` NULL or valid
 * for `dim / 2` doubles.
 */
DsStatus ds_propagate(const DsOrbit *orbit,
                      const double *state,
                      size_t dim,
                      double dt,
                      const double *dv,
                      double *result);

/**
 * Chance-constraint radius `sqrt(χ²₂(β))`.
 *
 * # Safety
 * `radius` must be valid for a write.
 */
DsStatus ds_chi2_radius(double beta, double *radius);

/**
 * Load and resolve a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `scenario` valid for a write.
 */
DsStatus ds_scenario_load(const char *path, DsScenario **scenario);

/**
 * # Safety
 * `scenario` must be NULL or a handle from this library, freed once.
 */
void ds_scenario_free(DsScenario *scenario);

/**
 * Two-impulse plan through the scenario waypoints.
 *
 * # Safety
 * `scenario` must be a live handle, `plan` valid for a write.
 */
DsStatus ds_plan_from_waypoints(const DsScenario *scenario, DsPlan **plan);

/**
 * Optimize the scenario over its burn-count range. `total_dv` (m/s) and
 * `time_of_flight` (s) may be NULL.
 *
 * # Safety
 * `scenario` must be a live handle, `plan` valid for a write.
 */
DsStatus ds_plan_optimize(const DsScenario *scenario,
                          DsPlan **plan,
                          double *total_dv,
                          double *time_of_flight);

/**
 * Plan from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `plan` valid for a write.
 */
DsStatus ds_plan_from_json(const char *json, DsPlan **plan);

/**
 * JSON form of a plan, released with [`ds_string_free`].
 *
 * # Safety
 * `plan` must be a live handle, `json` valid for a write.
 */
DsStatus ds_plan_to_json(const DsPlan *plan, char **json);

/**
 * # Safety
 * `s` must be NULL or a string from this library, freed once.
 */
void ds_string_free(char *s);

/**
 * # Safety
 * `plan` must be NULL or a handle from this library, freed once.
 */
void ds_plan_free(DsPlan *plan);

/**
 * # Safety
 * `plan` must be a live handle and `count` valid for a write.
 */
DsStatus ds_plan_burn_count(const DsPlan *plan, size_t *count);

/**
 * Time (s) and LVLH Δv (m/s, 3 doubles) of burn `index`.
 *
 * # Safety
 * `plan` must be a live handle, `t` valid for a write, `dv` for 3 doubles.
 */
DsStatus ds_plan_burn(const DsPlan *plan, size_t index, double *t, double *dv);

/**
 * Dispersion of `plan` under the scenario's models. `trials` and `seed`
 * override the scenario for the sampling modes.
 *
 * # Safety
 * Handles must be live, `result` valid for a write.
 */
DsStatus ds_disperse(const DsScenario *scenario,
                     const DsPlan *plan,
                     DsUqMode mode,
                     size_t trials,
                     uint64_t seed,
                     DsDispersion **result);

/**
 * # Safety
 * `result` must be NULL or a handle from this library, freed once.
 */
void ds_dispersion_free(DsDispersion *result);

/**
 * Post-burn covariance of burn `index` (36 doubles).
 *
 * # Safety
 * `result` must be a live handle, `p` valid for `cap` doubles.
 */
DsStatus ds_dispersion_post_burn(const DsDispersion *result, size_t index, double *p, size_t cap);

/**
 * Mean, standard deviation and 99th percentile of the total ΔV, m/s.
 *
 * # Safety
 * `result` must be a live handle; outputs valid for writes.
 */
DsStatus ds_dispersion_total_dv(const DsDispersion *result, double *mean, double *std, double *p99);

/**
 * Free-drift safety of `plan` with the scenario's keep-out sphere,
 * horizon and confidence. `min_clearance` (m) may be NULL.
 *
 * # Safety
 * Handles must be live, `pass` valid for a write.
 */
DsStatus ds_drift_verify(const DsScenario *scenario,
                         const DsPlan *plan,
                         bool *pass,
                         double *min_clearance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRIFTSAFE_H */
