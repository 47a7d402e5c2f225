//! Execution simulator: turns predicted volume ratios into a per-minute
//! schedule, replays it against minute bars with passive limit orders and
//! two closing market sweeps, and scores the result against the day VWAP.

mod sim;
mod stats;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use sim::{simulate_day, Fill, Order, OrderKind, SimFlags, SimResult};
pub use stats::{
    aggregate_stats, read_ledger, vi_stress, write_ledger, LedgerRow, SideStats, Summary, ViStress,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "BUY",
            Side::Sell => "SELL",
        }
    }

    pub fn flip(self) -> Side {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BUY" => Ok(Side::Buy),
            "SELL" => Ok(Side::Sell),
            other => Err(Error::Invalid(format!("unknown side `{other}`"))),
        }
    }
}

/// Fill-model assumptions for replaying orders against bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillModelConfig {
    /// Largest fraction of a bar's volume a limit order may take.
    pub participation_cap: f64,
    /// Adverse price adjustment on market fills, in bp.
    pub market_slippage_bp: f64,
    pub tick_size: f64,
    /// Minutes before the close of the first cancel-and-sweep.
    pub first_cancel_before_close: usize,
    /// Minutes before the close of the final cancel-and-sweep.
    pub final_cancel_before_close: usize,
}

impl Default for FillModelConfig {
    fn default() -> Self {
        Self {
            participation_cap: 0.1,
            market_slippage_bp: 2.0,
            tick_size: 0.01,
            first_cancel_before_close: 30,
            final_cancel_before_close: 10,
        }
    }
}

impl FillModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("fill model: {m}")));
        if !(self.participation_cap > 0.0 && self.participation_cap <= 1.0) {
            return bad("participation_cap must lie in (0, 1]");
        }
        if !(self.market_slippage_bp >= 0.0 && self.market_slippage_bp.is_finite()) {
            return bad("market_slippage_bp must be nonnegative");
        }
        if !(self.tick_size > 0.0 && self.tick_size.is_finite()) {
            return bad("tick_size must be positive");
        }
        if self.final_cancel_before_close == 0
            || self.first_cancel_before_close <= self.final_cancel_before_close
        {
            return bad("need first_cancel_before_close > final_cancel_before_close > 0");
        }
        Ok(())
    }

    /// Minute indices of the two sweeps in a session of `bars` minutes.
    pub fn sweep_minutes(&self, bars: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if self.first_cancel_before_close > bars {
            return Err(Error::Config(format!(
                "first sweep {} minutes before close does not fit a {bars}-minute session",
                self.first_cancel_before_close
            )));
        }
        Ok((
            bars - self.first_cancel_before_close,
            bars - self.final_cancel_before_close,
        ))
    }
}

/// Per-minute share schedule for one stock-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub symbol: String,
    pub date: NaiveDate,
    pub side: Side,
    pub total_qty: u64,
    pub per_minute_qty: Vec<u64>,
}

impl ExecutionPlan {
    /// Builds a plan from predicted ratios via [`allocate_quantity`].
    pub fn from_ratios(
        symbol: impl Into<String>,
        date: NaiveDate,
        side: Side,
        total_qty: u64,
        pred_ratios: &[f64],
    ) -> Result<Self> {
        Ok(Self {
            symbol: symbol.into(),
            date,
            side,
            total_qty,
            per_minute_qty: allocate_quantity(pred_ratios, total_qty)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sum: u64 = self.per_minute_qty.iter().sum();
        if sum != self.total_qty {
            return Err(Error::Invalid(format!(
                "plan for {} {} schedules {sum} shares but targets {}",
                self.symbol, self.date, self.total_qty
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total_qty` proportional to
/// `pred_ratios`. Ties on the remainder go to the earlier minute.
pub fn allocate_quantity(pred_ratios: &[f64], total_qty: u64) -> Result<Vec<u64>> {
    if pred_ratios.is_empty() {
        return Err(Error::Invalid("no ratios to allocate over".into()));
    }
    if let Some(r) = pred_ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::Invalid(format!(
            "ratios must be finite and positive, got {r}"
        )));
    }
    let sum: f64 = pred_ratios.iter().sum();
    let quotas: Vec<f64> = pred_ratios
        .iter()
        .map(|r| total_qty as f64 * r / sum)
        .collect();
    let mut alloc: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = alloc.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total_qty.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    Ok(alloc)
}

/// Signed execution performance against VWAP in basis points; positive
/// means the trader beat the benchmark.
pub fn perf_bp(avg_exec: f64, vwap: f64, side: Side) -> f64 {
    match side {
        Side::Buy => (vwap - avg_exec) / vwap * 1e4,
        Side::Sell => (avg_exec - vwap) / vwap * 1e4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn allocation_examples() {
        assert_eq!(
            allocate_quantity(&[0.5, 0.3, 0.2], 10).unwrap(),
            vec![5, 3, 2]
        );
        let third = 1.0 / 3.0;
        assert_eq!(
            allocate_quantity(&[third, third, third], 10).unwrap(),
            vec![4, 3, 3]
        );
        assert_eq!(allocate_quantity(&[1.0, 1.0], 0).unwrap(), vec![0, 0]);
        assert!(allocate_quantity(&[1.0, 0.0], 5).is_err());
        assert!(allocate_quantity(&[], 5).is_err());
    }

    proptest! {
        #[test]
        fn allocation_sums_to_total(
            ratios in proptest::collection::vec(1e-6f64..10.0, 1..400),
            total in 0u64..5_000_000,
        ) {
            let a = allocate_quantity(&ratios, total).unwrap();
            prop_assert_eq!(a.iter().sum::<u64>(), total);
            let sum: f64 = ratios.iter().sum();
            for (q, r) in a.iter().zip(&ratios) {
                let quota = total as f64 * r / sum;
                prop_assert!((*q as f64 - quota).abs() < 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn perf_examples() {
        assert!((perf_bp(99.9, 100.0, Side::Buy) - 10.0).abs() < 1e-9);
        assert!((perf_bp(99.9, 100.0, Side::Sell) + 10.0).abs() < 1e-9);
        assert_eq!(perf_bp(100.0, 100.0, Side::Buy), 0.0);
        assert_eq!(perf_bp(100.0, 100.0, Side::Sell), 0.0);
    }

    proptest! {
        #[test]
        fn perf_antisymmetric(exec in 1.0f64..500.0, vwap in 1.0f64..500.0) {
            prop_assert_eq!(perf_bp(exec, vwap, Side::Buy), -perf_bp(exec, vwap, Side::Sell));
        }
    }

    #[test]
    fn side_parsing() {
        assert_eq!("buy".parse::<Side>().unwrap(), Side::Buy);
        assert_eq!(Side::Sell.to_string(), "SELL");
        assert!("hold".parse::<Side>().is_err());
    }

    #[test]
    fn fill_config_validation() {
        assert!(FillModelConfig::default().validate().is_ok());
        let c = FillModelConfig {
            participation_cap: 0.0,
            ..FillModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = FillModelConfig {
            final_cancel_before_close: 30,
            ..FillModelConfig::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(
            FillModelConfig::default().sweep_minutes(390).unwrap(),
            (360, 380)
        );
        assert!(FillModelConfig::default().sweep_minutes(20).is_err());
    }
}
