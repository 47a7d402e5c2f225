//! Log volume-ratio targets, normalization, time encodings, and the
//! context/horizon windows consumed by the forecasters.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate, Weekday};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::marketdata::{turnover_rate, MetaTable, TradingDay};
use crate::{Error, Result};

/// Lower clamp on a minute's share of the day volume before taking logs.
pub const RATIO_EPS: f64 = 1e-6;

/// `[m/T, sin, cos, Mon..Fri one-hot]`.
pub const TIME_DIMS: usize = 8;

/// Volume-derived context features preceding the time encoding.
pub const VOLUME_FEATURES: usize = 4;

/// Total context features per step.
pub const N_FEATURES: usize = VOLUME_FEATURES + TIME_DIMS;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "log_volume",
    "accum_volume_frac",
    "turnover",
    "log_amount",
    "time_frac",
    "time_sin",
    "time_cos",
    "dow_mon",
    "dow_tue",
    "dow_wed",
    "dow_thu",
    "dow_fri",
];

/// Index of the accumulated-volume feature, which is left unnormalized.
const ACCUM_FEATURE: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSeries {
    pub symbol: String,
    pub date: NaiveDate,
    /// `y_t = ln(T * max(v_t, eps * V) / V)`.
    pub y: Vec<f64>,
    /// Minutes whose ratio hit the clamp.
    pub clamped: usize,
}

pub fn ratio_transform(day: &TradingDay) -> Result<RatioSeries> {
    if day.total_volume == 0 {
        return Err(Error::ZeroVolume {
            symbol: day.symbol.clone(),
            date: day.date.to_string(),
        });
    }
    let t = day.len() as f64;
    let total = day.total_volume as f64;
    let mut clamped = 0;
    let y = day
        .volumes()
        .map(|v| {
            let ratio = v as f64 / total;
            let r = if ratio < RATIO_EPS {
                clamped += 1;
                RATIO_EPS
            } else {
                ratio
            };
            (t * r).ln()
        })
        .collect();
    Ok(RatioSeries {
        symbol: day.symbol.clone(),
        date: day.date,
        y,
        clamped,
    })
}

/// Inverse of the log-ratio transform: a minute's share of the day volume.
pub fn ratio_from_log(y: f64, bars_per_day: usize) -> f64 {
    y.exp() / bars_per_day as f64
}

/// Mean and population standard deviation of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZStats {
    pub mean: f64,
    pub std: f64,
}

impl ZStats {
    pub fn of(series: &[f64]) -> Self {
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.std > 0.0 {
            (x - self.mean) / self.std
        } else {
            0.0
        }
    }
}

/// Per-feature normalization statistics of one window's context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: Vec<ZStats>,
}

/// Population z-score. A constant series maps to all zeros.
pub fn zscore(series: &[f64]) -> Result<(Vec<f64>, ZStats)> {
    if series.is_empty() {
        return Err(Error::Invalid("zscore of an empty series".into()));
    }
    let stats = ZStats::of(series);
    Ok((series.iter().map(|&x| stats.apply(x)).collect(), stats))
}

pub fn time_encoding(
    minute_index: usize,
    bars_per_day: usize,
    date: NaiveDate,
) -> [f64; TIME_DIMS] {
    let t = bars_per_day as f64;
    let m = minute_index as f64;
    let phase = 2.0 * PI * m / t;
    let mut enc = [0.0; TIME_DIMS];
    enc[0] = m / t;
    enc[1] = phase.sin();
    enc[2] = phase.cos();
    let dow = match date.weekday() {
        Weekday::Mon => Some(0),
        Weekday::Tue => Some(1),
        Weekday::Wed => Some(2),
        Weekday::Thu => Some(3),
        Weekday::Fri => Some(4),
        Weekday::Sat | Weekday::Sun => None,
    };
    if let Some(d) = dow {
        enc[3 + d] = 1.0;
    }
    enc
}

/// One model sample: a normalized context and the log-ratio targets of the
/// next `horizon` minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWindow {
    pub symbol: String,
    pub stock_id: usize,
    pub context_len: usize,
    /// Row-major `context_len x N_FEATURES`.
    pub context: Vec<f64>,
    /// Row-major `horizon x TIME_DIMS`.
    pub time_enc_future: Vec<f64>,
    pub target: Vec<f64>,
    pub norm_stats: NormStats,
    /// Date and minute of the first target step.
    pub target_date: NaiveDate,
    pub target_minute: usize,
    /// Date of the last target step; drives the chronological split.
    pub last_target_date: NaiveDate,
}

impl FeatureWindow {
    pub fn horizon(&self) -> usize {
        self.target.len()
    }

    pub fn context_row(&self, step: usize) -> &[f64] {
        &self.context[step * N_FEATURES..(step + 1) * N_FEATURES]
    }

    /// Checks the no-NaN and accumulated-volume invariants.
    pub fn check(&self) -> Result<()> {
        let all = self
            .context
            .iter()
            .chain(&self.time_enc_future)
            .chain(&self.target);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "window {} {} minute {}",
                self.symbol, self.target_date, self.target_minute
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for step in 0..self.context_len {
            let row = self.context_row(step);
            let a = row[ACCUM_FEATURE];
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Invalid(format!(
                    "accumulated volume fraction {a} outside [0, 1]"
                )));
            }
            let new_day =
                step > 0 && row[VOLUME_FEATURES] < self.context_row(step - 1)[VOLUME_FEATURES];
            if !new_day && a < prev {
                return Err(Error::Invalid(
                    "accumulated volume fraction decreased within a day".into(),
                ));
            }
            prev = a;
        }
        Ok(())
    }
}

/// Where a window sits inside a [`WindowSource`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowSpec {
    pub stock: usize,
    pub start: usize,
    pub last_target_date: NaiveDate,
}

pub trait TargetDated {
    fn last_target_date(&self) -> NaiveDate;
}

impl TargetDated for FeatureWindow {
    fn last_target_date(&self) -> NaiveDate {
        self.last_target_date
    }
}

impl TargetDated for WindowSpec {
    fn last_target_date(&self) -> NaiveDate {
        self.last_target_date
    }
}

/// One stock's days concatenated minute by minute.
#[derive(Debug, Clone)]
struct StockSeries {
    symbol: String,
    stock_id: usize,
    log_volume: Vec<f64>,
    volume: Vec<f64>,
    turnover: Vec<f64>,
    log_amount: Vec<f64>,
    time: Vec<[f64; TIME_DIMS]>,
    y: Vec<f64>,
    date: Vec<NaiveDate>,
    minute: Vec<usize>,
}

impl StockSeries {
    fn len(&self) -> usize {
        self.y.len()
    }
}

/// Lazily materializes [`FeatureWindow`]s from per-stock minute series.
///
/// Holding the series instead of every window keeps memory linear in the
/// number of minutes rather than minutes times context length.
#[derive(Debug, Clone)]
pub struct WindowSource {
    stocks: Vec<StockSeries>,
    context_len: usize,
    horizon: usize,
    bars_per_day: usize,
}

impl WindowSource {
    /// Groups `days` per symbol (sorted by date) and precomputes the minute
    /// series. Stock ids are positions of symbols in `meta`.
    pub fn new(
        days: &[TradingDay],
        meta: &MetaTable,
        context_len: usize,
        horizon: usize,
    ) -> Result<Self> {
        if context_len == 0 || horizon == 0 {
            return Err(Error::Invalid(
                "context length and horizon must be at least 1".into(),
            ));
        }
        let bars_per_day = days.first().map(|d| d.len()).unwrap_or(0);
        if days.iter().any(|d| d.len() != bars_per_day) {
            return Err(Error::Invalid(
                "all days must have the same number of bars".into(),
            ));
        }
        let ids: BTreeMap<&str, usize> = meta
            .keys()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut by_symbol: BTreeMap<&str, Vec<&TradingDay>> = BTreeMap::new();
        for day in days {
            by_symbol.entry(day.symbol.as_str()).or_default().push(day);
        }
        let mut stocks = Vec::with_capacity(by_symbol.len());
        for (symbol, mut sdays) in by_symbol {
            let stock_id = *ids
                .get(symbol)
                .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))?;
            let info = &meta[symbol];
            sdays.sort_by_key(|d| d.date);
            let n = sdays.len() * bars_per_day;
            let mut s = StockSeries {
                symbol: symbol.to_string(),
                stock_id,
                log_volume: Vec::with_capacity(n),
                volume: Vec::with_capacity(n),
                turnover: Vec::with_capacity(n),
                log_amount: Vec::with_capacity(n),
                time: Vec::with_capacity(n),
                y: Vec::with_capacity(n),
                date: Vec::with_capacity(n),
                minute: Vec::with_capacity(n),
            };
            for day in sdays {
                let ratios = ratio_transform(day)?;
                for (bar, y) in day.bars.iter().zip(ratios.y) {
                    s.log_volume.push((bar.volume as f64).ln_1p());
                    s.volume.push(bar.volume as f64);
                    s.turnover.push(turnover_rate(bar, info));
                    s.log_amount.push(bar.amount.ln_1p());
                    s.time
                        .push(time_encoding(bar.minute_index, bars_per_day, day.date));
                    s.y.push(y);
                    s.date.push(day.date);
                    s.minute.push(bar.minute_index);
                }
            }
            stocks.push(s);
        }
        Ok(Self {
            stocks,
            context_len,
            horizon,
            bars_per_day,
        })
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn bars_per_day(&self) -> usize {
        self.bars_per_day
    }

    pub fn n_series(&self) -> usize {
        self.stocks.len()
    }

    /// All windows, ordered by (stock, start).
    pub fn specs(&self) -> Vec<WindowSpec> {
        let span = self.context_len + self.horizon;
        let mut out = Vec::new();
        for (i, s) in self.stocks.iter().enumerate() {
            if s.len() < span {
                continue;
            }
            for start in 0..=(s.len() - span) {
                out.push(WindowSpec {
                    stock: i,
                    start,
                    last_target_date: s.date[start + span - 1],
                });
            }
        }
        out
    }

    /// The window whose first target step is minute `minute` of `date` for
    /// `symbol`, if enough history precedes it.
    pub fn spec_for_target(
        &self,
        symbol: &str,
        date: NaiveDate,
        minute: usize,
    ) -> Option<WindowSpec> {
        let (i, s) = self
            .stocks
            .iter()
            .enumerate()
            .find(|(_, s)| s.symbol == symbol)?;
        let day_pos = s.date.partition_point(|d| *d < date);
        if day_pos >= s.len() || s.date[day_pos] != date {
            return None;
        }
        let target = day_pos + minute;
        let start = target.checked_sub(self.context_len)?;
        let last = target + self.horizon - 1;
        if last >= s.len() {
            return None;
        }
        Some(WindowSpec {
            stock: i,
            start,
            last_target_date: s.date[last],
        })
    }

    pub fn materialize(&self, spec: &WindowSpec) -> FeatureWindow {
        let s = &self.stocks[spec.stock];
        let c = self.context_len;
        let ctx = spec.start..spec.start + c;
        let tgt = spec.start + c..spec.start + c + self.horizon;

        let z_vol = ZStats::of(&s.log_volume[ctx.clone()]);
        let z_turn = ZStats::of(&s.turnover[ctx.clone()]);
        let z_amt = ZStats::of(&s.log_amount[ctx.clone()]);
        let window_volume: f64 = s.volume[ctx.clone()].iter().sum();

        let mut context = Vec::with_capacity(c * N_FEATURES);
        let mut accum = 0.0;
        let mut prev_date = s.date[spec.start];
        for k in ctx.clone() {
            if s.date[k] != prev_date {
                accum = 0.0;
                prev_date = s.date[k];
            }
            accum += s.volume[k];
            let frac = if window_volume > 0.0 {
                (accum / window_volume).min(1.0)
            } else {
                0.0
            };
            context.push(z_vol.apply(s.log_volume[k]));
            context.push(frac);
            context.push(z_turn.apply(s.turnover[k]));
            context.push(z_amt.apply(s.log_amount[k]));
            context.extend_from_slice(&s.time[k]);
        }
        let mut time_enc_future = Vec::with_capacity(self.horizon * TIME_DIMS);
        for k in tgt.clone() {
            time_enc_future.extend_from_slice(&s.time[k]);
        }
        FeatureWindow {
            symbol: s.symbol.clone(),
            stock_id: s.stock_id,
            context_len: c,
            context,
            time_enc_future,
            target: s.y[tgt.clone()].to_vec(),
            norm_stats: NormStats {
                features: vec![
                    z_vol,
                    ZStats {
                        mean: 0.0,
                        std: 1.0,
                    },
                    z_turn,
                    z_amt,
                ],
            },
            target_date: s.date[tgt.start],
            target_minute: s.minute[tgt.start],
            last_target_date: spec.last_target_date,
        }
    }
}

/// Materializes every window of `days`, ordered by (symbol, start).
pub fn build_windows(
    days: &[TradingDay],
    meta: &MetaTable,
    context_len: usize,
    horizon: usize,
) -> Result<Vec<FeatureWindow>> {
    let source = WindowSource::new(days, meta, context_len, horizon)?;
    let specs = source.specs();
    Ok(specs.par_iter().map(|s| source.materialize(s)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<W> {
    pub train: Vec<W>,
    pub validation: Vec<W>,
    pub test: Vec<W>,
}

/// Chronological split on the date of each window's last target step.
/// Both ends are inclusive. Empty partitions produce warnings.
pub fn split_by_date<W: TargetDated>(
    windows: Vec<W>,
    train_end: NaiveDate,
    val_end: NaiveDate,
) -> Result<(DatasetSplit<W>, Vec<String>)> {
    if train_end >= val_end {
        return Err(Error::Invalid(format!(
            "train_end {train_end} must precede val_end {val_end}"
        )));
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for w in windows {
        let d = w.last_target_date();
        if d <= train_end {
            split.train.push(w);
        } else if d <= val_end {
            split.validation.push(w);
        } else {
            split.test.push(w);
        }
    }
    let mut warnings = Vec::new();
    for (name, len) in [
        ("train", split.train.len()),
        ("validation", split.validation.len()),
        ("test", split.test.len()),
    ] {
        if len == 0 {
            warnings.push(format!("{name} partition is empty"));
        }
    }
    Ok((split, warnings))
}
