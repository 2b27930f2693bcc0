#ifndef QCS_H
#define QCS_H

/* Generated by cbindgen from the qcs-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sentinel for an infinite request window.
 */
#define QCS_WINDOW_INFINITE UINT64_MAX

/**
 * Sentinel asking the simulator to pick its own warmup length.
 */
#define QCS_WARMUP_AUTO UINT64_MAX

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum QcsStatus {
  QcsStatus_Ok = 0,
  QcsStatus_NullArgument = 1,
  QcsStatus_InvalidUtf8 = 2,
  QcsStatus_InvalidJson = 3,
  QcsStatus_InvalidParameter = 4,
  QcsStatus_InfeasibleWindow = 5,
  QcsStatus_Unsupported = 6,
  QcsStatus_StateSpaceTooLarge = 7,
  QcsStatus_SamplerOverrun = 8,
  QcsStatus_Overloaded = 9,
  QcsStatus_NonConvergence = 10,
  QcsStatus_InvalidConfig = 11,
  QcsStatus_InternalPanic = 12,
} QcsStatus;

/**
 * Provenance of a moment estimate.
 */
typedef enum QcsMomentMethod {
  QcsMomentMethod_ClosedForm = 0,
  QcsMomentMethod_Series = 1,
  QcsMomentMethod_MonteCarlo = 2,
} QcsMomentMethod;

/**
 * Which waiting-time formula produced an estimate.
 */
typedef enum QcsWaitMethod {
  QcsWaitMethod_ExactMg1 = 0,
  QcsWaitMethod_ExactMms = 1,
  QcsWaitMethod_LeeLongton = 2,
  QcsWaitMethod_Simulated = 3,
} QcsWaitMethod;

/**
 * Opaque scenario handle.
 */
typedef struct QcsScenario QcsScenario;

/**
 * Full analytic evaluation of one scenario.
 */
typedef struct QcsEvalResult {
  /**
   * Aggregate request rate, 1/us.
   */
  double lambda_per_us;
  /**
   * Packets per batch, m.
   */
  uint32_t batch_size;
  /**
   * Concurrent requests, s.
   */
  uint32_t servers;
  /**
   * Resolved packet success probability.
   */
  double p;
  double e_b;
  double e_b_se;
  double e_b2;
  double e_t_service_us;
  double e_t_service2_us2;
  double c2_service;
  double rho;
  /**
   * False when the load is at or above one; the wait and sojourn
   * fields are infinity in that case.
   */
  bool stable;
  enum QcsMomentMethod window_method;
  enum QcsWaitMethod wait_method;
  double e_t_wait_us;
  double mst_us;
  double mst_se_us;
} QcsEvalResult;

/**
 * Aggregated simulation output.
 */
typedef struct QcsSimResult {
  double mean_wait_us;
  double mean_wait_se_us;
  double mean_service_us;
  double mean_service_se_us;
  double mean_sojourn_us;
  double mean_sojourn_se_us;
  double mean_in_system;
  double mean_in_system_se;
  double throughput_per_us;
  double throughput_se_per_us;
  double utilization;
  uint64_t requests_completed;
  uint64_t warmup_requests;
} QcsSimResult;

/**
 * First two raw moments of the window problem's batch count.
 */
typedef struct QcsMoments {
  double m1;
  double m2;
  /**
   * NaN unless the estimate is Monte Carlo.
   */
  double se_m1;
  double se_m2;
  enum QcsMomentMethod method;
} QcsMoments;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a scenario from its JSON description (the schema used by the
 * `qcs` CLI) and validates it. On success `*out` owns the handle; free
 * it with [`qcs_scenario_free`].
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum QcsStatus qcs_scenario_from_json(const char *json, struct QcsScenario **out);

/**
 * Frees a scenario handle. Null is accepted and ignored.
 *
 * # Safety
 * `handle` must have come from [`qcs_scenario_from_json`] and must not be
 * used afterwards.
 */
void qcs_scenario_free(struct QcsScenario *handle);

/**
 * Analytic evaluation: window moments (routed to a closed form, the
 * survival series, or `samples` Monte Carlo draws), service moments,
 * load, mean wait, and mean sojourn. `samples` of 0 means the default
 * budget (1e5).
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum QcsStatus qcs_eval(const struct QcsScenario *handle,
                        uint64_t samples,
                        uint64_t seed,
                        struct QcsEvalResult *out);

/**
 * Runs the discrete-event simulator. `warmup` of [`QCS_WARMUP_AUTO`]
 * applies the built-in heuristic. Fails with `Overloaded` when no steady
 * state exists.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum QcsStatus qcs_simulate(const struct QcsScenario *handle,
                            uint64_t warmup,
                            uint64_t measured,
                            uint32_t replications,
                            uint64_t seed,
                            struct QcsSimResult *out);

/**
 * Largest user count whose load stays at or below one.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum QcsStatus qcs_u_crit(const struct QcsScenario *handle,
                          uint64_t samples,
                          uint64_t seed,
                          uint64_t *out);

/**
 * Longest arm length (km) for `users` users before the load reaches one;
 * the handle's own user count and arm length are ignored.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum QcsStatus qcs_l_crit(const struct QcsScenario *handle,
                          uint32_t users,
                          uint64_t samples,
                          uint64_t seed,
                          double *out);

/**
 * Moments of the window problem for (n, w, p, m); `window` of
 * [`QCS_WINDOW_INFINITE`] lifts the deadline. Monte Carlo is used only
 * where no analytic route exists.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QcsStatus qcs_window_moments(uint32_t n,
                                  uint64_t window,
                                  double p,
                                  uint32_t m,
                                  uint64_t samples,
                                  uint64_t seed,
                                  struct QcsMoments *out);

/**
 * Effective attenuation (dB/km) of the all-photonic encoding at the
 * given inter-repeater spacing. NaN for nonpositive spacing.
 */
double qcs_alpha_eff(double hop_km);

/**
 * End-to-end packet success probability for an arm of `arm_km` with
 * `repeaters` intermediate repeaters. NaN for nonpositive length.
 */
double qcs_p_success(double arm_km, uint32_t repeaters);

/**
 * Repeater count in 0..=max minimizing (2N+1)/(L p).
 */
uint32_t qcs_optimize_repeaters(double arm_km, uint32_t max);

/**
 * Detail of the last failure on this thread; empty string when none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *qcs_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *qcs_status_name(enum QcsStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QCS_H */
