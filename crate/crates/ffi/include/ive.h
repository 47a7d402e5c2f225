#ifndef IVE_H
#define IVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Context features per minute expected by [`ive_model_predict`].
#define IVE_N_FEATURES 12

// Calendar encoding width per future minute.
#define IVE_TIME_DIMS 8

#define IVE_SIDE_BUY 0

#define IVE_SIDE_SELL 1

typedef enum IveStatus {
  IVE_STATUS_OK = 0,
  IVE_STATUS_NULL_POINTER = 1,
  IVE_STATUS_INVALID_ARGUMENT = 2,
  IVE_STATUS_IO = 3,
  IVE_STATUS_PARSE = 4,
  IVE_STATUS_CHECKPOINT = 5,
  IVE_STATUS_NUMERIC = 6,
  IVE_STATUS_INSUFFICIENT_DATA = 7,
  IVE_STATUS_UNSUPPORTED = 8,
  IVE_STATUS_PANIC = 9,
} IveStatus;

// One session of minute bars.
typedef struct IveDay IveDay;

// A forecaster restored from a checkpoint file.
typedef struct IveModel IveModel;

typedef struct IveFillConfig {
  double participation_cap;
  double market_slippage_bp;
  double tick_size;
  size_t first_cancel_before_close;
  size_t final_cancel_before_close;
} IveFillConfig;

// Outcome of [`ive_simulate_day`]. Prices are NaN when nothing was
// scheduled.
typedef struct IveSimSummary {
  uint64_t filled_qty;
  double avg_exec;
  double vwap;
  double perf_bp;
  bool used_first_sweep;
  bool used_final_sweep;
  bool vi_day;
  bool liquidity_breach;
} IveSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *ive_last_error(void);

// Loads a checkpoint written by `ive train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum IveStatus ive_model_load(const char *path, struct IveModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`ive_model_load`] and not be used afterwards.
void ive_model_free(struct IveModel *model);

// Context length in minutes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t ive_model_context_len(const struct IveModel *model);

// Forecast horizon in minutes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t ive_model_horizon(const struct IveModel *model);

// Whether the model produces Student-t distributions.
//
// # Safety
// `model` must be null or a live handle.
bool ive_model_is_probabilistic(const struct IveModel *model);

// Point forecasts (log-ratio units) for `horizon` future minutes.
//
// `context` is row-major `context_rows x IVE_N_FEATURES`; `time_future` is
// row-major `horizon x IVE_TIME_DIMS`; `out` receives `horizon` values.
//
// # Safety
// All pointers must reference arrays of the stated sizes.
enum IveStatus ive_model_predict(const struct IveModel *model,
                                 const double *context,
                                 size_t context_rows,
                                 const double *time_future,
                                 size_t horizon,
                                 size_t stock_id,
                                 double *out);

// Student-t parameters per horizon step. Fails with `Unsupported` for the
// point-forecast baselines.
//
// # Safety
// All pointers must reference arrays of the stated sizes.
enum IveStatus ive_model_distribution(const struct IveModel *model,
                                      const double *context,
                                      size_t context_rows,
                                      const double *time_future,
                                      size_t horizon,
                                      size_t stock_id,
                                      double *out_df,
                                      double *out_loc,
                                      double *out_scale);

// Builds a session from per-minute arrays of length `n`. Bar amounts are
// taken as volume times the typical price.
//
// # Safety
// `symbol` must be NUL-terminated, the arrays must hold `n` elements and
// `out` must be valid.
enum IveStatus ive_day_new(const char *symbol,
                           int32_t year,
                           uint32_t month,
                           uint32_t day,
                           const double *open,
                           const double *high,
                           const double *low,
                           const double *close,
                           const uint64_t *volume,
                           size_t n,
                           struct IveDay **out);

// Releases a session; null is ignored.
//
// # Safety
// `day` must come from [`ive_day_new`] and not be used afterwards.
void ive_day_free(struct IveDay *day);

// # Safety
// `day` must be a live handle and `out` valid.
enum IveStatus ive_day_vwap(const struct IveDay *day, double *out);

// # Safety
// `day` must be a live handle and `out` valid.
enum IveStatus ive_day_detect_vi(const struct IveDay *day, bool *out);

// Largest-remainder split of `total_qty` over `n` positive ratios.
//
// # Safety
// `ratios` and `out` must hold `n` elements.
enum IveStatus ive_allocate_quantity(const double *ratios,
                                     size_t n,
                                     uint64_t total_qty,
                                     uint64_t *out);

// Signed performance against VWAP in bp; positive beats the benchmark.
// Returns NaN for an unknown side.
double ive_perf_bp(double avg_exec, double vwap, int32_t side);

struct IveFillConfig ive_fill_config_default(void);

// Replays a per-minute schedule of `n` quantities against `day`.
//
// # Safety
// `day` must be a live handle, `per_minute_qty` must hold `n` elements and
// `cfg` and `out` must be valid.
enum IveStatus ive_simulate_day(const struct IveDay *day,
                                int32_t side,
                                const uint64_t *per_minute_qty,
                                size_t n,
                                const struct IveFillConfig *cfg,
                                struct IveSimSummary *out);

// Ordinary least squares of `y` (length `n`) on the row-major `n x k`
// matrix `x`. Per-term outputs hold `k + intercept` values with the
// intercept first; any of them may be null to skip it.
//
// # Safety
// Non-null pointers must reference arrays of the stated sizes.
enum IveStatus ive_ols(const double *x,
                       const double *y,
                       size_t n,
                       size_t k,
                       bool intercept,
                       double *out_coef,
                       double *out_std_err,
                       double *out_t,
                       double *out_p,
                       double *out_r_squared);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IVE_H */
