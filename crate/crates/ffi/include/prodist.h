#ifndef PRODIST_H
#define PRODIST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PdStatus {
  PD_STATUS_OK = 0,
  PD_STATUS_NULL_POINTER = 1,
  PD_STATUS_INVALID_ARGUMENT = 2,
  PD_STATUS_INVALID_DISTRIBUTION = 3,
  PD_STATUS_DIMENSION_MISMATCH = 4,
  PD_STATUS_GUARD_EXCEEDED = 5,
  PD_STATUS_NUMERIC_FAILURE = 6,
  PD_STATUS_UTILITY_FAILURE = 7,
  PD_STATUS_IO = 8,
  PD_STATUS_BUFFER_TOO_SMALL = 9,
  PD_STATUS_PANIC = 10,
} PdStatus;

// A product distribution: one probability vector per agent.
typedef struct PdDistribution PdDistribution;

// A world utility over a categorical joint move space.
typedef struct PdProblem PdProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pd_version(void);

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *pd_last_error_message(void);

// Dense table problem. `values` has `Π move_counts` entries in row-major
// order with agent 0 varying slowest.
//
// # Safety
// Pointers must be valid for the given lengths; `out` must be writable.
enum PdStatus pd_problem_from_table(const size_t *move_counts,
                                    size_t agents,
                                    const double *values,
                                    size_t value_count,
                                    struct PdProblem **out);

// Built-in generator: `random-table`, `congestion` (default costs) or `sum`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum PdStatus pd_problem_generate(const char *name,
                                  size_t agents,
                                  size_t moves,
                                  uint64_t seed,
                                  struct PdProblem **out);

// Black-box problem evaluated through `callback`.
//
// # Safety
// `move_counts` must hold `agents` entries; `callback` and `user` must stay
// valid until the problem is freed.
enum PdStatus pd_problem_from_callback(const size_t *move_counts,
                                       size_t agents,
                                       int32_t (*callback)(void *user,
                                                           const size_t *x,
                                                           size_t n,
                                                           double *out),
                                       void *user,
                                       struct PdProblem **out);

// # Safety
// `problem` must come from a `pd_problem_*` constructor and not be freed twice.
void pd_problem_free(struct PdProblem *problem);

// # Safety
// `problem` must be a live handle; `out` must be writable.
enum PdStatus pd_problem_agent_count(const struct PdProblem *problem, size_t *out);

// # Safety
// `problem` must be a live handle; `out` must be writable.
enum PdStatus pd_problem_move_count(const struct PdProblem *problem, size_t agent, size_t *out);

// `G(x)` for the `agents` move indices at `x`.
//
// # Safety
// `x` must hold `agents` entries; `out` must be writable.
enum PdStatus pd_problem_evaluate(const struct PdProblem *problem,
                                  const size_t *x,
                                  size_t agents,
                                  double *out);

// Uniform distribution over the problem's moves.
//
// # Safety
// `problem` must be a live handle; `out` must be writable.
enum PdStatus pd_distribution_uniform(const struct PdProblem *problem, struct PdDistribution **out);

// Distribution from concatenated per-agent probability vectors, laid out as
// the problem's move counts.
//
// # Safety
// `values` must hold `len` entries; `out` must be writable.
enum PdStatus pd_distribution_from_marginals(const struct PdProblem *problem,
                                             const double *values,
                                             size_t len,
                                             struct PdDistribution **out);

// # Safety
// `dist` must come from a `pd_*` constructor and not be freed twice.
void pd_distribution_free(struct PdDistribution *dist);

// `S(q) = Σ_i S(q_i)`.
//
// # Safety
// `dist` must be a live handle; `out` must be writable.
enum PdStatus pd_distribution_entropy(const struct PdDistribution *dist, double *out);

// Copies agent `agent`'s probabilities into `buf`. `written` receives the
// number of moves, also when `buf` is too small.
//
// # Safety
// `buf` must be writable for `len` entries; `written` must be writable.
enum PdStatus pd_distribution_marginal(const struct PdDistribution *dist,
                                       size_t agent,
                                       double *buf,
                                       size_t len,
                                       size_t *written);

// `E_q(G)` by enumeration.
//
// # Safety
// Handles must be live; `out` must be writable.
enum PdStatus pd_exact_expectation(const struct PdProblem *problem,
                                   const struct PdDistribution *dist,
                                   double *out);

// `L(q) = β·E_q(G) − S(q)` by enumeration.
//
// # Safety
// Handles must be live; `out` must be writable.
enum PdStatus pd_lagrangian(const struct PdProblem *problem,
                            const struct PdDistribution *dist,
                            double beta,
                            double *out);

// One exact projected-gradient step; the result is a new handle.
//
// # Safety
// Handles must be live; `out` must be writable.
enum PdStatus pd_gradient_step(const struct PdProblem *problem,
                               const struct PdDistribution *dist,
                               double beta,
                               double step_size,
                               double floor,
                               struct PdDistribution **out);

// One exact Nearest Newton step; the result is a new handle.
//
// # Safety
// Handles must be live; `out` must be writable.
enum PdStatus pd_nearest_newton_step(const struct PdProblem *problem,
                                     const struct PdDistribution *dist,
                                     double beta,
                                     double floor,
                                     struct PdDistribution **out);

// One exact damped Brouwer step; the result is a new handle.
//
// # Safety
// Handles must be live; `out` must be writable.
enum PdStatus pd_brouwer_step(const struct PdProblem *problem,
                              const struct PdDistribution *dist,
                              double beta,
                              double mix,
                              struct PdDistribution **out);

// Marginals of the Boltzmann distribution `∝ e^{−βG}`.
//
// # Safety
// `problem` must be live; `out` must be writable.
enum PdStatus pd_canonical_marginals(const struct PdProblem *problem,
                                     double beta,
                                     struct PdDistribution **out);

// Exhaustive minimizer of `G`; ties go to the lowest row-major index.
//
// # Safety
// `x` must be writable for `len` entries; `value` must be writable.
enum PdStatus pd_global_minimum(const struct PdProblem *problem,
                                size_t *x,
                                size_t len,
                                double *value);

// Runs a JSON run configuration in memory. `out` receives a JSON string
// `{"summary": {...}, "trace": [...]}` to be released with `pd_string_free`.
// Relative table paths resolve against the working directory.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum PdStatus pd_run_json(const char *config_json, char **out);

// # Safety
// `s` must come from this library and not be freed twice.
void pd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRODIST_H */
