//! Minute bars, trading sessions and the bar-level quantities derived from
//! them (VWAP, turnover, volatility-interruption flags).

mod io;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{load_meta, load_minute_bars, write_meta, write_minute_bars, LoadReport, RejectedDay};
pub use synthetic::{generate_synthetic, u_shape_intensity, SyntheticConfig, SyntheticData};

/// Default number of one-minute bars in a session.
pub const DEFAULT_BARS_PER_DAY: usize = 390;

/// One minute of trading for one symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteBar {
    pub symbol: String,
    pub date: NaiveDate,
    pub minute_index: usize,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
    pub amount: f64,
}

impl MinuteBar {
    /// (high + low + close) / 3, the per-bar trade price proxy.
    pub fn typical_price(&self) -> f64 {
        (self.high + self.low + self.close) / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        let body_lo = self.open.min(self.close);
        let body_hi = self.open.max(self.close);
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Invalid(format!(
                "{} {} minute {}: prices must be finite and positive",
                self.symbol, self.date, self.minute_index
            )));
        }
        if !(self.low <= body_lo && body_hi <= self.high) {
            return Err(Error::Invalid(format!(
                "{} {} minute {}: OHLC violates low <= open,close <= high",
                self.symbol, self.date, self.minute_index
            )));
        }
        if !self.amount.is_finite() || self.amount < 0.0 {
            return Err(Error::Invalid(format!(
                "{} {} minute {}: amount must be finite and nonnegative",
                self.symbol, self.date, self.minute_index
            )));
        }
        if self.volume == 0 && self.amount != 0.0 {
            return Err(Error::Invalid(format!(
                "{} {} minute {}: zero volume with nonzero amount",
                self.symbol, self.date, self.minute_index
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Market {
    KR,
    US,
    SYNTH,
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Market::KR => "KR",
            Market::US => "US",
            Market::SYNTH => "SYNTH",
        };
        f.write_str(s)
    }
}

impl FromStr for Market {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "KR" => Ok(Market::KR),
            "US" => Ok(Market::US),
            "SYNTH" => Ok(Market::SYNTH),
            other => Err(Error::Invalid(format!("unknown market `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StockMeta {
    pub symbol: String,
    pub shares_outstanding: u64,
    pub market: Market,
}

impl StockMeta {
    pub fn new(symbol: impl Into<String>, shares_outstanding: u64, market: Market) -> Result<Self> {
        if shares_outstanding == 0 {
            return Err(Error::Invalid("shares_outstanding must be positive".into()));
        }
        Ok(Self {
            symbol: symbol.into(),
            shares_outstanding,
            market,
        })
    }
}

/// Metadata keyed by symbol.
pub type MetaTable = BTreeMap<String, StockMeta>;

/// A complete session of `bars.len()` contiguous minute bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradingDay {
    pub symbol: String,
    pub date: NaiveDate,
    pub bars: Vec<MinuteBar>,
    pub total_volume: u64,
}

impl TradingDay {
    /// Builds a day, checking contiguity, bar invariants and the volume total.
    pub fn new(symbol: impl Into<String>, date: NaiveDate, bars: Vec<MinuteBar>) -> Result<Self> {
        let symbol = symbol.into();
        if bars.is_empty() {
            return Err(Error::Invalid(format!("{symbol} {date}: empty session")));
        }
        for (i, bar) in bars.iter().enumerate() {
            if bar.minute_index != i {
                return Err(Error::Invalid(format!(
                    "{symbol} {date}: bar {i} has minute_index {}",
                    bar.minute_index
                )));
            }
            if bar.symbol != symbol || bar.date != date {
                return Err(Error::Invalid(format!(
                    "{symbol} {date}: bar {i} belongs to {} {}",
                    bar.symbol, bar.date
                )));
            }
            bar.validate()?;
        }
        let total_volume = bars.iter().map(|b| b.volume).sum();
        Ok(Self {
            symbol,
            date,
            bars,
            total_volume,
        })
    }

    /// Number of bars in the session (T).
    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn open(&self) -> f64 {
        self.bars[0].open
    }

    pub fn close(&self) -> f64 {
        self.bars[self.bars.len() - 1].close
    }

    pub fn high(&self) -> f64 {
        self.bars
            .iter()
            .map(|b| b.high)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn low(&self) -> f64 {
        self.bars
            .iter()
            .map(|b| b.low)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn volumes(&self) -> impl Iterator<Item = u64> + '_ {
        self.bars.iter().map(|b| b.volume)
    }
}

/// Volume-weighted average of bar typical prices over the session.
pub fn day_vwap(day: &TradingDay) -> Result<f64> {
    if day.total_volume == 0 {
        return Err(Error::UndefinedVwap);
    }
    let mut notional = 0.0;
    let mut volume = 0.0;
    for bar in &day.bars {
        let v = bar.volume as f64;
        notional += bar.typical_price() * v;
        volume += v;
    }
    Ok(notional / volume)
}

/// Relative slack on the VI thresholds so that exact 10% moves are caught
/// regardless of price scale.
const VI_SLACK: f64 = 1e-12;

/// Volatility interruption: session high at least 10% above the open, or
/// session low at least 10% below it.
pub fn detect_vi(day: &TradingDay) -> bool {
    let open = day.open();
    day.high() / open >= 1.10 - VI_SLACK || day.low() / open <= 0.90 + VI_SLACK
}

pub fn turnover_rate(bar: &MinuteBar, meta: &StockMeta) -> f64 {
    bar.volume as f64 / meta.shares_outstanding as f64
}
