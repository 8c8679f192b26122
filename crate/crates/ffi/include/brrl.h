#ifndef BRRL_H
#define BRRL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every call.
typedef enum BrrlStatus {
  BRRL_STATUS_OK = 0,
  BRRL_STATUS_NULL_POINTER = 1,
  BRRL_STATUS_INVALID_ARGUMENT = 2,
  BRRL_STATUS_INVALID_MODEL = 3,
  BRRL_STATUS_NON_CONVERGENCE = 4,
  BRRL_STATUS_NUMERICAL_FAILURE = 5,
  // A Rust panic was caught at the boundary.
  BRRL_STATUS_INTERNAL = 6,
} BrrlStatus;

// Sampling rule of a bandit run.
typedef enum BrrlVariant {
  BRRL_VARIANT_PLAIN = 0,
  BRRL_VARIANT_TRUNCATED = 1,
  // `param` is δ.
  BRRL_VARIANT_INFLATED = 2,
  // `param` is the sampling scale.
  BRRL_VARIANT_FIXED_SCALE = 3,
} BrrlVariant;

// Result of a bandit run.
typedef struct BrrlBanditTrace BrrlBanditTrace;

// Tabular MDP.
typedef struct BrrlMdp BrrlMdp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *brrl_last_error_message(void);

// Empirical left-tail CVaR of `len` samples at level `alpha`.
//
// # Safety
// `samples` must point to `len` readable doubles; `out` must be writable.
enum BrrlStatus brrl_empirical_cvar(const double *samples, size_t len, double alpha, double *out);

// Order-statistic CVaR estimator; `len` must equal the derived sample size
// of `alpha`.
//
// # Safety
// `samples` must point to `len` readable doubles; `out` must be writable.
enum BrrlStatus brrl_modified_cvar(const double *samples, size_t len, double alpha, double *out);

// Left-tail CVaR of a normal distribution.
//
// # Safety
// `out` must be writable.
enum BrrlStatus brrl_normal_cvar(double mu, double sigma, double alpha, double *out);

// Number of posterior samples used at level `alpha`.
//
// # Safety
// `out` must be writable.
enum BrrlStatus brrl_sample_size(double alpha, size_t *out);

// MDP from row-major `P[s][a][s']` and `r[s][a]`.
//
// # Safety
// `transitions` must hold `S·A·S` doubles, `rewards` `S·A`; `out` must be
// writable.
enum BrrlStatus brrl_mdp_new(size_t num_states,
                             size_t num_actions,
                             const double *transitions,
                             const double *rewards,
                             double discount,
                             struct BrrlMdp **out);

// Standard 4×4 Frozen Lake with hole-exit probability `hole_exit`.
//
// # Safety
// `out` must be writable.
enum BrrlStatus brrl_mdp_frozen_lake(double hole_exit, struct BrrlMdp **out);

// Random MDP with Dirichlet(1, …, 1) rows and uniform rewards.
//
// # Safety
// `out` must be writable.
enum BrrlStatus brrl_mdp_random(size_t num_states,
                                size_t num_actions,
                                double discount,
                                uint64_t seed,
                                struct BrrlMdp **out);

// Releases an MDP. Null is ignored.
//
// # Safety
// `mdp` must come from a constructor above and not be used afterwards.
void brrl_mdp_free(struct BrrlMdp *mdp);

// # Safety
// `mdp` must be a live handle; outputs must be writable.
enum BrrlStatus brrl_mdp_shape(const struct BrrlMdp *mdp, size_t *num_states, size_t *num_actions);

// Optimal values and a greedy policy by value iteration.
//
// # Safety
// `mdp` must be a live handle; `values` and `policy` must hold `S` entries.
enum BrrlStatus brrl_mdp_value_iteration(const struct BrrlMdp *mdp,
                                         double tol,
                                         size_t max_iterations,
                                         double *values,
                                         size_t *policy);

// Exact value of a deterministic policy.
//
// # Safety
// `mdp` must be a live handle; `policy` and `values` must hold `S` entries.
enum BrrlStatus brrl_mdp_evaluate_policy(const struct BrrlMdp *mdp,
                                         const size_t *policy,
                                         double *values);

// Runs BRPS-CMAB at level `alpha` (0 gives Thompson sampling) on the
// sinusoidal `num_arms`-arm bandit for `horizon` rounds, scoring BR-Regret
// at `br_alpha`.
//
// # Safety
// `out` must be writable.
enum BrrlStatus brrl_bandit_run(size_t num_arms,
                                double alpha,
                                double br_alpha,
                                enum BrrlVariant variant,
                                double param,
                                size_t horizon,
                                uint64_t seed,
                                struct BrrlBanditTrace **out);

// Number of rounds in a trace.
//
// # Safety
// `trace` must be a live handle; `out` must be writable.
enum BrrlStatus brrl_bandit_trace_len(const struct BrrlBanditTrace *trace, size_t *out);

// Copies the cumulative conventional regret into `out[0..len]`.
//
// # Safety
// `trace` must be a live handle; `out` must hold `len` doubles, where `len`
// equals the trace length.
enum BrrlStatus brrl_bandit_trace_regret(const struct BrrlBanditTrace *trace,
                                         double *out,
                                         size_t len);

// Copies the cumulative BR-Regret into `out[0..len]`.
//
// # Safety
// As for [`brrl_bandit_trace_regret`].
enum BrrlStatus brrl_bandit_trace_br_regret(const struct BrrlBanditTrace *trace,
                                            double *out,
                                            size_t len);

// Copies the chosen arms into `out[0..len]`.
//
// # Safety
// As for [`brrl_bandit_trace_regret`], with `out` holding `len` integers.
enum BrrlStatus brrl_bandit_trace_arms(const struct BrrlBanditTrace *trace,
                                       size_t *out,
                                       size_t len);

// Releases a trace. Null is ignored.
//
// # Safety
// `trace` must come from [`brrl_bandit_run`] and not be used afterwards.
void brrl_bandit_trace_free(struct BrrlBanditTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRRL_H */
