//! Daily market descriptors and their regression against execution
//! performance.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ols::{ols_named, OlsResult};
use crate::features::ZStats;
use crate::marketdata::{StockMeta, TradingDay};
use crate::{Error, Result};

/// Minimum stock-days for the performance regression.
pub const MIN_PERF_ROWS: usize = 30;

pub const MARKET_FEATURE_NAMES: [&str; 5] = ["x1", "x2", "x3", "x4", "x5"];

/// Descriptors of one stock-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketFeatures {
    pub symbol: String,
    pub date: NaiveDate,
    /// Close over open.
    pub x1: f64,
    /// Session high over session low.
    pub x2: f64,
    /// Mean per-bar high/low over traded bars.
    pub x3: f64,
    /// Population std of per-bar high/low over traded bars.
    pub x4: f64,
    /// Natural log of the day's turnover ratio.
    pub x5: f64,
}

impl MarketFeatures {
    pub fn as_array(&self) -> [f64; 5] {
        [self.x1, self.x2, self.x3, self.x4, self.x5]
    }
}

pub fn compute_market_features(day: &TradingDay, meta: &StockMeta) -> Result<MarketFeatures> {
    if day.total_volume == 0 {
        return Err(Error::ZeroVolume {
            symbol: day.symbol.clone(),
            date: day.date.to_string(),
        });
    }
    let spreads: Vec<f64> = day
        .bars
        .iter()
        .filter(|b| b.volume > 0)
        .map(|b| b.high / b.low)
        .collect();
    let stats = ZStats::of(&spreads);
    Ok(MarketFeatures {
        symbol: day.symbol.clone(),
        date: day.date,
        x1: day.close() / day.open(),
        x2: day.high() / day.low(),
        x3: stats.mean,
        x4: stats.std,
        x5: (day.total_volume as f64 / meta.shares_outstanding as f64).ln(),
    })
}

/// Performance in bp regressed on the z-scored descriptors, with intercept.
pub fn performance_regression(features: &[MarketFeatures], perf_bp: &[f64]) -> Result<OlsResult> {
    if features.len() != perf_bp.len() {
        return Err(Error::Shape {
            op: "performance regression",
            lhs: vec![features.len()],
            rhs: vec![perf_bp.len()],
        });
    }
    if features.len() < MIN_PERF_ROWS {
        return Err(Error::Insufficient(format!(
            "performance regression needs at least {MIN_PERF_ROWS} stock-days, got {}",
            features.len()
        )));
    }
    let raw: Vec<[f64; 5]> = features.iter().map(MarketFeatures::as_array).collect();
    let stats: Vec<ZStats> = (0..5)
        .map(|j| ZStats::of(&raw.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let rows: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| r.iter().zip(&stats).map(|(v, s)| s.apply(*v)).collect())
        .collect();
    let names: Vec<String> = MARKET_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    ols_named(&names, &rows, perf_bp, true)
}
