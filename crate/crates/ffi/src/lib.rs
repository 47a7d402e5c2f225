//! C ABI over `ive-core`.
//!
//! Every fallible function returns an [`IveStatus`]; on failure a message is
//! available from [`ive_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use chrono::NaiveDate;
use ive_core::analysis::ols;
use ive_core::execsim::{
    allocate_quantity, perf_bp, simulate_day, ExecutionPlan, FillModelConfig, Side,
};
use ive_core::features::{FeatureWindow, NormStats, N_FEATURES, TIME_DIMS};
use ive_core::marketdata::{day_vwap, detect_vi, MinuteBar, TradingDay};
use ive_core::model::{load_checkpoint, AnyModel, Forecast};
use ive_core::Error;

/// Context features per minute expected by [`ive_model_predict`].
pub const IVE_N_FEATURES: usize = 12;
/// Calendar encoding width per future minute.
pub const IVE_TIME_DIMS: usize = 8;

const _: () = assert!(IVE_N_FEATURES == N_FEATURES && IVE_TIME_DIMS == TIME_DIMS);
pub const IVE_SIDE_BUY: i32 = 0;
pub const IVE_SIDE_SELL: i32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IveStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Numeric = 6,
    InsufficientData = 7,
    Unsupported = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> IveStatus {
    match e {
        Error::Io { .. } => IveStatus::Io,
        Error::Parse { .. } => IveStatus::Parse,
        Error::Checkpoint(_) => IveStatus::Checkpoint,
        Error::NonFinite(_)
        | Error::RankDeficient(_)
        | Error::UndefinedVwap
        | Error::ZeroVolume { .. } => IveStatus::Numeric,
        Error::Insufficient(_) => IveStatus::InsufficientData,
        _ => IveStatus::InvalidArgument,
    }
}

struct Fail(IveStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(IveStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IveStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IveStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(IveStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail(IveStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(IveStatus::NullPointer, format!("{what} is null")))
}

fn side_of(side: i32) -> Result<Side, Fail> {
    match side {
        IVE_SIDE_BUY => Ok(Side::Buy),
        IVE_SIDE_SELL => Ok(Side::Sell),
        other => Err(invalid(format!(
            "side must be 0 (buy) or 1 (sell), got {other}"
        ))),
    }
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ive_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// A forecaster restored from a checkpoint file.
pub struct IveModel {
    inner: AnyModel,
    context: usize,
}

/// Loads a checkpoint written by `ive train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ive_model_load(path: *const c_char, out: *mut *mut IveModel) -> IveStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(Fail(IveStatus::NullPointer, "path is null".into()));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let inner = load_checkpoint(path)?;
        let context = match &inner {
            AnyModel::Transformer(m) => m.config().context,
            AnyModel::Recurrent(m) => m.config().context,
        };
        *out = Box::into_raw(Box::new(IveModel { inner, context }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`ive_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ive_model_free(model: *mut IveModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Context length in minutes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ive_model_context_len(model: *const IveModel) -> usize {
    model.as_ref().map_or(0, |m| m.context)
}

/// Forecast horizon in minutes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ive_model_horizon(model: *const IveModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.horizon())
}

/// Whether the model produces Student-t distributions.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ive_model_is_probabilistic(model: *const IveModel) -> bool {
    model
        .as_ref()
        .is_some_and(|m| m.inner.as_transformer().is_some())
}

unsafe fn window_from_raw(
    model: &IveModel,
    context: *const f64,
    context_rows: usize,
    time_future: *const f64,
    horizon: usize,
    stock_id: usize,
) -> Result<FeatureWindow, Fail> {
    if context_rows != model.context || horizon != model.inner.horizon() {
        return Err(invalid(format!(
            "model expects {} context rows and horizon {}, got {context_rows} and {horizon}",
            model.context,
            model.inner.horizon()
        )));
    }
    let ctx = input(context, context_rows * N_FEATURES, "context")?;
    let tf = input(time_future, horizon * TIME_DIMS, "time_future")?;
    let epoch = NaiveDate::default();
    Ok(FeatureWindow {
        symbol: String::new(),
        stock_id,
        context_len: context_rows,
        context: ctx.to_vec(),
        time_enc_future: tf.to_vec(),
        target: vec![0.0; horizon],
        norm_stats: NormStats {
            features: Vec::new(),
        },
        target_date: epoch,
        target_minute: 0,
        last_target_date: epoch,
    })
}

/// Point forecasts (log-ratio units) for `horizon` future minutes.
///
/// `context` is row-major `context_rows x IVE_N_FEATURES`; `time_future` is
/// row-major `horizon x IVE_TIME_DIMS`; `out` receives `horizon` values.
///
/// # Safety
/// All pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ive_model_predict(
    model: *const IveModel,
    context: *const f64,
    context_rows: usize,
    time_future: *const f64,
    horizon: usize,
    stock_id: usize,
    out: *mut f64,
) -> IveStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| Fail(IveStatus::NullPointer, "model is null".into()))?;
        let w = window_from_raw(m, context, context_rows, time_future, horizon, stock_id)?;
        let pred = m.inner.point_forecast(&w)?;
        output(out, horizon, "out")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// Student-t parameters per horizon step. Fails with `Unsupported` for the
/// point-forecast baselines.
///
/// # Safety
/// All pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ive_model_distribution(
    model: *const IveModel,
    context: *const f64,
    context_rows: usize,
    time_future: *const f64,
    horizon: usize,
    stock_id: usize,
    out_df: *mut f64,
    out_loc: *mut f64,
    out_scale: *mut f64,
) -> IveStatus {
    guard(|| {
        let m = model
            .as_ref()
            .ok_or_else(|| Fail(IveStatus::NullPointer, "model is null".into()))?;
        let t = m.inner.as_transformer().ok_or_else(|| {
            Fail(
                IveStatus::Unsupported,
                "model has no distribution head".into(),
            )
        })?;
        let w = window_from_raw(m, context, context_rows, time_future, horizon, stock_id)?;
        let params = t.forward(&w)?;
        let df = output(out_df, horizon, "out_df")?;
        let loc = output(out_loc, horizon, "out_loc")?;
        let scale = output(out_scale, horizon, "out_scale")?;
        for (i, s) in params.steps.iter().enumerate() {
            df[i] = s.df;
            loc[i] = s.loc;
            scale[i] = s.scale;
        }
        Ok(())
    })
}

/// One session of minute bars.
pub struct IveDay {
    inner: TradingDay,
}

/// Builds a session from per-minute arrays of length `n`. Bar amounts are
/// taken as volume times the typical price.
///
/// # Safety
/// `symbol` must be NUL-terminated, the arrays must hold `n` elements and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ive_day_new(
    symbol: *const c_char,
    year: i32,
    month: u32,
    day: u32,
    open: *const f64,
    high: *const f64,
    low: *const f64,
    close: *const f64,
    volume: *const u64,
    n: usize,
    out: *mut *mut IveDay,
) -> IveStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if symbol.is_null() {
            return Err(Fail(IveStatus::NullPointer, "symbol is null".into()));
        }
        let symbol = CStr::from_ptr(symbol)
            .to_str()
            .map_err(|_| invalid("symbol is not UTF-8"))?
            .to_string();
        let date =
            NaiveDate::from_ymd_opt(year, month, day).ok_or_else(|| invalid("invalid date"))?;
        let (o, h, l, c) = (
            input(open, n, "open")?,
            input(high, n, "high")?,
            input(low, n, "low")?,
            input(close, n, "close")?,
        );
        let v = input(volume, n, "volume")?;
        let bars = (0..n)
            .map(|i| {
                let typical = (h[i] + l[i] + c[i]) / 3.0;
                MinuteBar {
                    symbol: symbol.clone(),
                    date,
                    minute_index: i,
                    open: o[i],
                    high: h[i],
                    low: l[i],
                    close: c[i],
                    volume: v[i],
                    amount: v[i] as f64 * typical,
                }
            })
            .collect();
        let inner = TradingDay::new(symbol, date, bars)?;
        *out = Box::into_raw(Box::new(IveDay { inner }));
        Ok(())
    })
}

/// Releases a session; null is ignored.
///
/// # Safety
/// `day` must come from [`ive_day_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ive_day_free(day: *mut IveDay) {
    if !day.is_null() {
        drop(Box::from_raw(day));
    }
}

/// # Safety
/// `day` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ive_day_vwap(day: *const IveDay, out: *mut f64) -> IveStatus {
    guard(|| {
        let d = day
            .as_ref()
            .ok_or_else(|| Fail(IveStatus::NullPointer, "day is null".into()))?;
        *out_ref(out, "out")? = day_vwap(&d.inner)?;
        Ok(())
    })
}

/// # Safety
/// `day` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ive_day_detect_vi(day: *const IveDay, out: *mut bool) -> IveStatus {
    guard(|| {
        let d = day
            .as_ref()
            .ok_or_else(|| Fail(IveStatus::NullPointer, "day is null".into()))?;
        *out_ref(out, "out")? = detect_vi(&d.inner);
        Ok(())
    })
}

/// Largest-remainder split of `total_qty` over `n` positive ratios.
///
/// # Safety
/// `ratios` and `out` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ive_allocate_quantity(
    ratios: *const f64,
    n: usize,
    total_qty: u64,
    out: *mut u64,
) -> IveStatus {
    guard(|| {
        let r = input(ratios, n, "ratios")?;
        let alloc = allocate_quantity(r, total_qty)?;
        output(out, n, "out")?.copy_from_slice(&alloc);
        Ok(())
    })
}

/// Signed performance against VWAP in bp; positive beats the benchmark.
/// Returns NaN for an unknown side.
#[no_mangle]
pub extern "C" fn ive_perf_bp(avg_exec: f64, vwap: f64, side: i32) -> f64 {
    side_of(side).map_or(f64::NAN, |s| perf_bp(avg_exec, vwap, s))
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IveFillConfig {
    pub participation_cap: f64,
    pub market_slippage_bp: f64,
    pub tick_size: f64,
    pub first_cancel_before_close: usize,
    pub final_cancel_before_close: usize,
}

impl From<IveFillConfig> for FillModelConfig {
    fn from(c: IveFillConfig) -> Self {
        FillModelConfig {
            participation_cap: c.participation_cap,
            market_slippage_bp: c.market_slippage_bp,
            tick_size: c.tick_size,
            first_cancel_before_close: c.first_cancel_before_close,
            final_cancel_before_close: c.final_cancel_before_close,
        }
    }
}

#[no_mangle]
pub extern "C" fn ive_fill_config_default() -> IveFillConfig {
    let d = FillModelConfig::default();
    IveFillConfig {
        participation_cap: d.participation_cap,
        market_slippage_bp: d.market_slippage_bp,
        tick_size: d.tick_size,
        first_cancel_before_close: d.first_cancel_before_close,
        final_cancel_before_close: d.final_cancel_before_close,
    }
}

/// Outcome of [`ive_simulate_day`]. Prices are NaN when nothing was
/// scheduled.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IveSimSummary {
    pub filled_qty: u64,
    pub avg_exec: f64,
    pub vwap: f64,
    pub perf_bp: f64,
    pub used_first_sweep: bool,
    pub used_final_sweep: bool,
    pub vi_day: bool,
    pub liquidity_breach: bool,
}

/// Replays a per-minute schedule of `n` quantities against `day`.
///
/// # Safety
/// `day` must be a live handle, `per_minute_qty` must hold `n` elements and
/// `cfg` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ive_simulate_day(
    day: *const IveDay,
    side: i32,
    per_minute_qty: *const u64,
    n: usize,
    cfg: *const IveFillConfig,
    out: *mut IveSimSummary,
) -> IveStatus {
    guard(|| {
        let d = day
            .as_ref()
            .ok_or_else(|| Fail(IveStatus::NullPointer, "day is null".into()))?;
        let cfg = cfg
            .as_ref()
            .ok_or_else(|| Fail(IveStatus::NullPointer, "cfg is null".into()))?;
        let q = input(per_minute_qty, n, "per_minute_qty")?;
        let plan = ExecutionPlan {
            symbol: d.inner.symbol.clone(),
            date: d.inner.date,
            side: side_of(side)?,
            total_qty: q.iter().sum(),
            per_minute_qty: q.to_vec(),
        };
        let r = simulate_day(&d.inner, &plan, &FillModelConfig::from(*cfg))?;
        *out_ref(out, "out")? = IveSimSummary {
            filled_qty: r.filled_qty,
            avg_exec: r.avg_exec.unwrap_or(f64::NAN),
            vwap: r.vwap,
            perf_bp: r.perf_bp.unwrap_or(f64::NAN),
            used_first_sweep: r.flags.used_first_sweep,
            used_final_sweep: r.flags.used_final_sweep,
            vi_day: r.flags.vi_day,
            liquidity_breach: r.flags.liquidity_breach,
        };
        Ok(())
    })
}

/// Ordinary least squares of `y` (length `n`) on the row-major `n x k`
/// matrix `x`. Per-term outputs hold `k + intercept` values with the
/// intercept first; any of them may be null to skip it.
///
/// # Safety
/// Non-null pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ive_ols(
    x: *const f64,
    y: *const f64,
    n: usize,
    k: usize,
    intercept: bool,
    out_coef: *mut f64,
    out_std_err: *mut f64,
    out_t: *mut f64,
    out_p: *mut f64,
    out_r_squared: *mut f64,
) -> IveStatus {
    guard(|| {
        let xs = input(x, n * k, "x")?;
        let ys = input(y, n, "y")?;
        let rows: Vec<Vec<f64>> = if k == 0 {
            vec![Vec::new(); n]
        } else {
            xs.chunks(k).map(<[f64]>::to_vec).collect()
        };
        let r = ols(&rows, ys, intercept)?;
        let p = r.terms.len();
        let fields: [(*mut f64, fn(&ive_core::analysis::Term) -> f64); 4] = [
            (out_coef, |t| t.coef),
            (out_std_err, |t| t.std_err),
            (out_t, |t| t.t_stat),
            (out_p, |t| t.p_value),
        ];
        for (ptr, get) in fields {
            if !ptr.is_null() {
                let dst = slice::from_raw_parts_mut(ptr, p);
                for (d, t) in dst.iter_mut().zip(&r.terms) {
                    *d = get(t);
                }
            }
        }
        if let Some(r2) = out_r_squared.as_mut() {
            *r2 = r.r_squared;
        }
        Ok(())
    })
}
