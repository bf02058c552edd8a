#ifndef PACGRAD_H
#define PACGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdint.h>

// Result code of every fallible call.
typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_ARGUMENT = 1,
  PG_STATUS_DOMAIN = 2,
  PG_STATUS_CONTRACT = 3,
  PG_STATUS_FORMAT = 4,
  PG_STATUS_CONFIG = 5,
  PG_STATUS_IO = 6,
  PG_STATUS_INVALID_UTF8 = 7,
  PG_STATUS_INTERNAL = 8,
} PgStatus;

typedef enum PgTheorem {
  PG_THEOREM_DATA_PAC = 0,
  PG_THEOREM_FGD = 1,
  PG_THEOREM_FSGD = 2,
  PG_THEOREM_GLD = 3,
  PG_THEOREM_SGLD = 4,
  PG_THEOREM_SGLD_SUBG = 5,
  PG_THEOREM_CLD = 6,
  PG_THEOREM_RGD = 7,
} PgTheorem;

// Opaque lattice sampler with its own random stream.
typedef struct PgLattice PgLattice;

// Opaque trajectory summary loaded from `summary.json`.
typedef struct PgTrajectory PgTrajectory;

// `(η, n, m, δ)`.
typedef struct PgCatoniParams {
  double eta;
  uint64_t n;
  uint64_t m;
  double delta;
} PgCatoniParams;

typedef struct PgBoundBreakdown {
  double empirical_term;
  double confidence_term;
  double kl_term;
  double total;
  enum PgTheorem theorem;
} PgBoundBreakdown;

typedef struct PgCldInputs {
  double beta;
  double lambda_reg;
  double loss_bound;
  double lipschitz;
  double horizon;
} PgCldInputs;

// Inputs a trajectory does not record. A NaN field means "not given".
typedef struct PgExtras {
  double kl;
  double lipschitz;
  double l0;
  double rgd_p;
} PgExtras;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if it succeeded.
// The pointer stays valid until the next call on the same thread.
const char *pg_last_error_message(void);

// Free a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and must not be freed twice.
void pg_string_free(char *s);

enum PgStatus pg_c_eta(double eta, double *out_value);

enum PgStatus pg_c_delta(double delta, double *out_value);

enum PgStatus pg_phi(double x, double lambda, uint64_t k, double *out_value);

enum PgStatus pg_phi_inv(double y, double lambda, uint64_t k, double *out_value);

enum PgStatus pg_data_pac_bound(double kl,
                                double emp_risk_i,
                                const struct PgCatoniParams *params_ptr,
                                struct PgBoundBreakdown *out_bound);

enum PgStatus pg_fgd_bound(double emp_risk_i,
                           double grad_diff_weighted_sum,
                           uint64_t d,
                           uint64_t steps,
                           const struct PgCatoniParams *params_ptr,
                           struct PgBoundBreakdown *out_bound);

enum PgStatus pg_fsgd_bound(double emp_risk_i,
                            double expected_grad_diff_weighted_sum,
                            uint64_t d,
                            uint64_t steps,
                            const struct PgCatoniParams *params_ptr,
                            struct PgBoundBreakdown *out_bound);

enum PgStatus pg_gld_bound(double emp_risk_i,
                           double weighted_gradnorm_sum,
                           const struct PgCatoniParams *params_ptr,
                           struct PgBoundBreakdown *out_bound);

enum PgStatus pg_sgld_bound(double emp_risk_i,
                            double weighted_gradnorm_sum,
                            uint64_t batch_size,
                            const struct PgCatoniParams *params_ptr,
                            struct PgBoundBreakdown *out_bound);

enum PgStatus pg_sgld_bound_subgaussian(double emp_risk_i,
                                        double l0,
                                        double schedule_sum,
                                        uint64_t steps,
                                        uint64_t d,
                                        const struct PgCatoniParams *params_ptr,
                                        struct PgBoundBreakdown *out_bound);

enum PgStatus pg_cld_bound(double emp_risk_i,
                           const struct PgCldInputs *inputs,
                           const struct PgCatoniParams *params_ptr,
                           struct PgBoundBreakdown *out_bound);

enum PgStatus pg_rgd_bound(double emp_risk_i,
                           double grad_diff_sum,
                           double eps,
                           double p,
                           uint64_t d,
                           uint64_t steps,
                           const struct PgCatoniParams *params_ptr,
                           struct PgBoundBreakdown *out_bound);

// Create a sampler for the `d`-dimensional lattice prior with parameter `p`.
enum PgStatus pg_lattice_new(double p, uint64_t d, uint64_t seed, struct PgLattice **out_handle);

uint64_t pg_lattice_dim(const struct PgLattice *handle);

enum PgStatus pg_lattice_log_normalizer(const struct PgLattice *handle, double *out_value);

// Draw one lattice vector into `out_values`, which must hold exactly `len = d` entries.
//
// # Safety
// `out_values` must be valid for `len` writes of `int64_t`.
enum PgStatus pg_lattice_sample(struct PgLattice *handle, int64_t *out_values, uint64_t len);

// # Safety
// `handle` must be null or come from [`pg_lattice_new`] and not be freed twice.
void pg_lattice_free(struct PgLattice *handle);

// Load a `summary.json` written by `pacgrad train`.
enum PgStatus pg_trajectory_load(const char *path, struct PgTrajectory **out_handle);

// Parse a trajectory summary from an in-memory JSON document.
enum PgStatus pg_trajectory_from_json(const char *json, struct PgTrajectory **out_handle);

// Evaluate `theorem` on the trajectory. `extras` may be null.
enum PgStatus pg_trajectory_certify(const struct PgTrajectory *handle,
                                    enum PgTheorem theorem,
                                    const struct PgCatoniParams *params_ptr,
                                    const struct PgExtras *extras,
                                    struct PgBoundBreakdown *out_bound);

// Like [`pg_trajectory_certify`] but returns the full report as JSON.
// Release the string with [`pg_string_free`].
enum PgStatus pg_trajectory_report_json(const struct PgTrajectory *handle,
                                        enum PgTheorem theorem,
                                        const struct PgCatoniParams *params_ptr,
                                        const struct PgExtras *extras,
                                        char **out_json);

// Number of recorded optimisation steps, or 0 for a null handle.
uint64_t pg_trajectory_steps(const struct PgTrajectory *handle);

// # Safety
// `handle` must be null or come from a `pg_trajectory_*` constructor and not be freed twice.
void pg_trajectory_free(struct PgTrajectory *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACGRAD_H */
