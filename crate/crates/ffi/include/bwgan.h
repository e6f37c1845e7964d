#ifndef BWGAN_H
#define BWGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BwganStatus {
  BWGAN_STATUS_OK = 0,
  BWGAN_STATUS_NULL_POINTER = 1,
  BWGAN_STATUS_INVALID_ARGUMENT = 2,
  BWGAN_STATUS_SHAPE_MISMATCH = 3,
  BWGAN_STATUS_DUAL_UNDEFINED = 4,
  BWGAN_STATUS_WEIGHT_SUM = 5,
  BWGAN_STATUS_IO = 6,
  BWGAN_STATUS_FORMAT = 7,
  BWGAN_STATUS_NUMERICAL = 8,
  BWGAN_STATUS_PANIC = 9,
} BwganStatus;

typedef enum BwganMeasure {
  BWGAN_MEASURE_COUNTING = 0,
  BWGAN_MEASURE_NORMALIZED = 1,
} BwganMeasure;

// Opaque scalar critic network.
typedef struct BwganCritic BwganCritic;

// Opaque normed space.
typedef struct BwganSpace BwganSpace;

// Channel × height × width layout of one signal.
typedef struct BwganGeometry {
  size_t channels;
  size_t height;
  size_t width;
} BwganGeometry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len` bytes) and returns the full message length
// excluding the terminator.
//
// # Safety
// `buf` must be null or point to at least `len` writable bytes.
size_t bwgan_last_error_message(char *buf, size_t len);

// Hölder conjugate `q = p/(p−1)`; fails unless `1 < p < ∞`.
//
// # Safety
// `q` must be a valid pointer to writable memory.
enum BwganStatus bwgan_dual_exponent(double p, double *q);

// Creates an `L^p` space.
//
// # Safety
// `space` must be a valid pointer; on success it receives a handle to free
// with [`bwgan_space_free`].
enum BwganStatus bwgan_space_lp(double p, enum BwganMeasure m, struct BwganSpace **space);

// Creates a Sobolev space `W^{s,p}` with the given per-axis frequency bound.
//
// # Safety
// As for [`bwgan_space_lp`].
enum BwganStatus bwgan_space_sobolev(double p,
                                     double s,
                                     double frequency_scale,
                                     enum BwganMeasure m,
                                     struct BwganSpace **space);

// Weighted space `‖x‖ = ‖w ⊙ x‖_base`. The base handle is copied and
// remains owned by the caller.
//
// # Safety
// `base` must be a live handle, `weights` must point to `len` doubles and
// `space` must be writable.
enum BwganStatus bwgan_space_weighted(const struct BwganSpace *base,
                                      const double *weights,
                                      size_t len,
                                      struct BwganSpace **space);

// The dual space as a new handle.
//
// # Safety
// `space` must be a live handle and `dual` writable.
enum BwganStatus bwgan_space_dual(const struct BwganSpace *space, struct BwganSpace **dual);

// Releases a space handle; null is ignored.
//
// # Safety
// `space` must be null or a handle not yet freed.
void bwgan_space_free(struct BwganSpace *space);

// `‖x‖_B` for a signal of `channels·height·width` doubles.
//
// # Safety
// `space` must be live, `x` must point to the full signal, `result` writable.
enum BwganStatus bwgan_norm(const struct BwganSpace *space,
                            struct BwganGeometry geom,
                            const double *x,
                            double *result);

// `‖g‖_{B*}` of coordinates `g` under the coordinate pairing.
//
// # Safety
// As for [`bwgan_norm`].
enum BwganStatus bwgan_dual_norm(const struct BwganSpace *space,
                                 struct BwganGeometry geom,
                                 const double *g,
                                 double *result);

// Writes a nonzero `x` with `⟨g, x⟩ = ‖g‖_{B*}‖x‖_B` into `x_out`.
//
// # Safety
// `g` and `x_out` must each hold the full signal length.
enum BwganStatus bwgan_dual_maximizer(const struct BwganSpace *space,
                                      struct BwganGeometry geom,
                                      const double *g,
                                      double *x_out);

// Exact `W_p` between two discrete measures. Points are stored row-major,
// one signal per row; weights must each sum to 1.
//
// # Safety
// `a_points` holds `a_count` signals and `a_weights` `a_count` doubles;
// likewise for `b`. `result` must be writable.
enum BwganStatus bwgan_wasserstein(const struct BwganSpace *space,
                                   struct BwganGeometry geom,
                                   const double *a_points,
                                   const double *a_weights,
                                   size_t a_count,
                                   const double *b_points,
                                   const double *b_weights,
                                   size_t b_count,
                                   double p,
                                   double *result);

// Heuristic `λ = E‖X‖_B` and `γ = E‖X‖_{B*}` over `count` samples.
//
// # Safety
// `samples` holds `count` signals; `lambda` and `gamma` must be writable.
enum BwganStatus bwgan_heuristics(const struct BwganSpace *space,
                                  struct BwganGeometry geom,
                                  const double *samples,
                                  size_t count,
                                  double *lambda,
                                  double *gamma);

// `c = γ(1 + m/(2λ))`.
//
// # Safety
// `c` must be writable.
enum BwganStatus bwgan_optimal_constant_c(double gamma, double lambda, double mean_norm, double *c);

// Loads an MLP critic from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `critic` must be writable and
// receives a handle to free with [`bwgan_critic_free`].
enum BwganStatus bwgan_critic_load(const char *path, struct BwganCritic **critic);

// Releases a critic handle; null is ignored.
//
// # Safety
// `critic` must be null or a handle not yet freed.
void bwgan_critic_free(struct BwganCritic *critic);

// Number of doubles the critic expects per input signal.
//
// # Safety
// `critic` must be live and `len` writable.
enum BwganStatus bwgan_critic_input_len(const struct BwganCritic *critic, size_t *len);

// Evaluates the critic on `count` flat inputs, writing `count` scores.
//
// # Safety
// `x` holds `count · input_len` doubles and `scores` has room for `count`.
enum BwganStatus bwgan_critic_eval(const struct BwganCritic *critic,
                                   const double *x,
                                   size_t count,
                                   double *scores);

// `‖∂D(x)‖_{B*}` at one input laid out as `geom`.
//
// # Safety
// `critic` and `space` must be live, `x` must hold one signal, `result`
// writable.
enum BwganStatus bwgan_critic_grad_dual_norm(const struct BwganCritic *critic,
                                             const struct BwganSpace *space,
                                             struct BwganGeometry geom,
                                             const double *x,
                                             double *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BWGAN_H */
