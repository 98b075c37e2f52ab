#ifndef RAMPMETER_H
#define RAMPMETER_H

/* Generated by cbindgen at build time. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes shared by all functions.
typedef enum RmStatus {
  RM_STATUS_OK = 0,
  RM_STATUS_NULL_POINTER = 1,
  RM_STATUS_INVALID_ARGUMENT = 2,
  RM_STATUS_CONFIG = 3,
  RM_STATUS_IO = 4,
  RM_STATUS_SIMULATION = 5,
  RM_STATUS_PANIC = 6,
} RmStatus;

// A controller driven cycle by cycle from outside.
typedef struct RmController RmController;

// Aggregated result of one controller over several seeds.
typedef struct RmExperiment RmExperiment;

// Parsed and validated scenario.
typedef struct RmScenario RmScenario;

// Fairness statistics of per-ramp average delays.
typedef struct RmFairness {
  // Mean delay over ramps, s.
  double harsanyian;
  double gini;
  // Largest ramp delay, s.
  double rawlsian_max;
  // Demand-weighted mean delay, s.
  double aristotelian;
} RmFairness;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *rm_last_error_message(void);

// Weighted Gini coefficient of `n` values. `weights` may be null for unit
// weights.
//
// # Safety
// `values` (and `weights` when given) must point to `n` doubles.
enum RmStatus rm_gini(const double *values, const double *weights, size_t n, double *out);

// Fairness statistics of `n` ramp delays with their demands.
//
// # Safety
// `delays` and `demands` must point to `n` doubles; `out` must be writable.
enum RmStatus rm_fairness(const double *delays,
                          const double *demands,
                          size_t n,
                          struct RmFairness *out);

// Loads a scenario file. `overrides` holds `n_overrides` strings of the form
// `section.key=value`; it may be null when `n_overrides` is 0.
//
// # Safety
// All strings must be NUL-terminated; `out` must be writable.
enum RmStatus rm_scenario_load(const char *path,
                               const char *const *overrides,
                               size_t n_overrides,
                               struct RmScenario **out);

// # Safety
// `scenario` must come from [`rm_scenario_load`] and not be used afterwards.
void rm_scenario_free(struct RmScenario *scenario);

// Runs one controller for one seed and writes its trips, ramp log,
// space-time matrices and manifest into `out_dir`.
//
// # Safety
// `scenario` must be live; strings must be NUL-terminated.
enum RmStatus rm_simulate(const struct RmScenario *scenario,
                          const char *controller,
                          uint64_t seed,
                          const char *out_dir);

// Runs a named controller over `n_seeds` seeds.
//
// # Safety
// `seeds` must point to `n_seeds` integers; `out` must be writable.
enum RmStatus rm_experiment_run(const struct RmScenario *scenario,
                                const char *controller,
                                const uint64_t *seeds,
                                size_t n_seeds,
                                struct RmExperiment **out);

// Mean and sample standard deviation of a metric row such as
// `"Total Delay (h)"` or `"Gini"`.
//
// # Safety
// `experiment` must be live; `mean` and `std` must be writable.
enum RmStatus rm_experiment_metric(const struct RmExperiment *experiment,
                                   const char *label,
                                   double *mean,
                                   double *std);

// # Safety
// `experiment` must come from [`rm_experiment_run`] and not be used afterwards.
void rm_experiment_free(struct RmExperiment *experiment);

// Builds the named controller block of a scenario on its network.
//
// # Safety
// `scenario` must be live; `out` must be writable.
enum RmStatus rm_controller_new(const struct RmScenario *scenario,
                                const char *controller,
                                struct RmController **out);

// Number of on-ramps, the length of every per-ramp array.
//
// # Safety
// `controller` must be live or null (null yields 0).
size_t rm_controller_n_ramps(const struct RmController *controller);

// Number of mainline cells, the length of the per-cell array.
//
// # Safety
// `controller` must be live or null (null yields 0).
size_t rm_controller_n_cells(const struct RmController *controller);

// Resets the controller and writes its decisions for the first cycle.
// `flows_vph` may be null.
//
// # Safety
// `rates` (and `flows_vph` when given) must hold one double per on-ramp.
enum RmStatus rm_controller_initial(struct RmController *controller,
                                    double *rates,
                                    double *flows_vph);

// Feeds one cycle of measurements and writes the next decisions.
//
// `ramp_occupancy` and `ramp_queue_veh` hold one value per on-ramp,
// `cell_occupancy` one per cell (all occupancies in [0, 1]). `flows_vph`
// may be null.
//
// # Safety
// Every non-null array must have the length described above.
enum RmStatus rm_controller_step(struct RmController *controller,
                                 const double *ramp_occupancy,
                                 const double *ramp_queue_veh,
                                 const double *cell_occupancy,
                                 double *rates,
                                 double *flows_vph);

// # Safety
// `controller` must come from [`rm_controller_new`] and not be used afterwards.
void rm_controller_free(struct RmController *controller);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAMPMETER_H */
