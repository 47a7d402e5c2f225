use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_day, ExecutionPlan, FillModelConfig, Side, SimResult};
use crate::marketdata::TradingDay;
use crate::{Error, Result};

/// Fraction of results in each tail for the top/bottom means.
const TAIL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideStats {
    pub n: usize,
    pub mean_bp: f64,
    pub median_bp: f64,
    pub std_bp: f64,
}

impl SideStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Some(Self {
            n,
            mean_bp: mean,
            median_bp: median,
            std_bp: std,
        })
    }
}

/// Performance summary over scored results. Results without a defined
/// performance (empty plans) are counted in `n_undefined` and left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub n_undefined: usize,
    pub mean_bp: f64,
    pub median_bp: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_bp: f64,
    /// Fraction of results with positive performance.
    pub beat_ratio: f64,
    /// Mean of the best and worst `ceil(0.2 n)` results.
    pub top20_mean_bp: f64,
    pub bottom20_mean_bp: f64,
    pub buy: Option<SideStats>,
    pub sell: Option<SideStats>,
}

pub fn aggregate_stats(results: &[SimResult]) -> Result<Summary> {
    let scored: Vec<(Side, f64)> = results
        .iter()
        .filter_map(|r| r.perf_bp.map(|p| (r.side, p)))
        .collect();
    if scored.is_empty() {
        return Err(Error::Insufficient(
            "no results with a defined performance".into(),
        ));
    }
    let values: Vec<f64> = scored.iter().map(|(_, p)| *p).collect();
    let all = SideStats::of(&values).expect("nonempty");
    let n = values.len();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let k = ((TAIL_FRACTION * n as f64).ceil() as usize).clamp(1, n);
    let tail_mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let pick = |side: Side| -> Vec<f64> {
        scored
            .iter()
            .filter(|(s, _)| *s == side)
            .map(|(_, p)| *p)
            .collect()
    };
    Ok(Summary {
        n,
        n_undefined: results.len() - n,
        mean_bp: all.mean_bp,
        median_bp: all.median_bp,
        std_bp: all.std_bp,
        beat_ratio: values.iter().filter(|v| **v > 0.0).count() as f64 / n as f64,
        top20_mean_bp: tail_mean(&sorted[n - k..]),
        bottom20_mean_bp: tail_mean(&sorted[..k]),
        buy: SideStats::of(&pick(Side::Buy)),
        sell: SideStats::of(&pick(Side::Sell)),
    })
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Executions                {}", self.n)?;
        writeln!(f, "Average performance (bp)  {:.4}", self.mean_bp)?;
        writeln!(f, "Std deviation (bp)        {:.4}", self.std_bp)?;
        writeln!(f, "Median (bp)               {:.4}", self.median_bp)?;
        writeln!(f, "VWAP beat ratio           {:.4}", self.beat_ratio)?;
        writeln!(f, "Top 20% mean (bp)         {:.4}", self.top20_mean_bp)?;
        writeln!(f, "Bottom 20% mean (bp)      {:.4}", self.bottom20_mean_bp)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<26}{:>14}{:>14}",
            "Metric", "Buy Orders", "Sell Orders"
        )?;
        let cell = |s: &Option<SideStats>, g: fn(&SideStats) -> f64| {
            s.as_ref()
                .map_or("n/a".to_string(), |s| format!("{:.4}", g(s)))
        };
        writeln!(
            f,
            "{:<26}{:>14}{:>14}",
            "Average Performance (bp)",
            cell(&self.buy, |s| s.mean_bp),
            cell(&self.sell, |s| s.mean_bp)
        )?;
        write!(
            f,
            "{:<26}{:>14}{:>14}",
            "Standard Deviation (bp)",
            cell(&self.buy, |s| s.std_bp),
            cell(&self.sell, |s| s.std_bp)
        )
    }
}

/// Results split by whether the day triggered a volatility interruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViStress {
    pub vi_days: usize,
    pub non_vi_days: usize,
    /// `None` when the partition is empty.
    pub vi: Option<Summary>,
    pub non_vi: Option<Summary>,
    #[serde(skip)]
    pub results: Vec<SimResult>,
}

/// Simulates every plan against its day and summarizes VI and non-VI days
/// separately. Plans are matched to days by (symbol, date); results come
/// back in (symbol, date) order.
pub fn vi_stress(
    days: &[TradingDay],
    plans: &[ExecutionPlan],
    cfg: &FillModelConfig,
) -> Result<ViStress> {
    if plans.is_empty() {
        return Err(Error::Insufficient("no plans to simulate".into()));
    }
    let by_key: BTreeMap<(&str, NaiveDate), &TradingDay> = days
        .iter()
        .map(|d| ((d.symbol.as_str(), d.date), d))
        .collect();
    let mut pairs = plans
        .iter()
        .map(|p| {
            by_key
                .get(&(p.symbol.as_str(), p.date))
                .map(|d| (*d, p))
                .ok_or_else(|| {
                    Error::Invalid(format!("no session for plan {} {}", p.symbol, p.date))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|a, b| (&a.1.symbol, a.1.date).cmp(&(&b.1.symbol, b.1.date)));
    let results = pairs
        .par_iter()
        .map(|(d, p)| simulate_day(d, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let (vi, non_vi): (Vec<SimResult>, Vec<SimResult>) =
        results.iter().cloned().partition(|r| r.flags.vi_day);
    let summarize = |rs: &[SimResult]| -> Result<Option<Summary>> {
        if rs.iter().all(|r| r.perf_bp.is_none()) {
            Ok(None)
        } else {
            aggregate_stats(rs).map(Some)
        }
    };
    Ok(ViStress {
        vi_days: vi.len(),
        non_vi_days: non_vi.len(),
        vi: summarize(&vi)?,
        non_vi: summarize(&non_vi)?,
        results,
    })
}

impl fmt::Display for ViStress {
    /// Average/Median/Std rows with ASK (sell) and BID (buy) columns for
    /// each partition.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = |f: &mut fmt::Formatter<'_>,
                    title: &str,
                    days: usize,
                    s: &Option<Summary>|
         -> fmt::Result {
            writeln!(f, "{title} ({days} days)")?;
            let Some(s) = s else {
                return writeln!(f, "  partition empty");
            };
            writeln!(f, "{:<16}{:>14}{:>14}", "", "ASK", "BID")?;
            let cell = |side: &Option<SideStats>, g: fn(&SideStats) -> f64| {
                side.as_ref()
                    .map_or("n/a".to_string(), |x| format!("{:.3}", g(x)))
            };
            writeln!(
                f,
                "{:<16}{:>14}{:>14}",
                "Average (bp)",
                cell(&s.sell, |x| x.mean_bp),
                cell(&s.buy, |x| x.mean_bp)
            )?;
            writeln!(
                f,
                "{:<16}{:>14}{:>14}",
                "Median (bp)",
                cell(&s.sell, |x| x.median_bp),
                cell(&s.buy, |x| x.median_bp)
            )?;
            writeln!(
                f,
                "{:<16}{:>14}{:>14}",
                "Std (bp)",
                cell(&s.sell, |x| x.std_bp),
                cell(&s.buy, |x| x.std_bp)
            )
        };
        part(f, "VI", self.vi_days, &self.vi)?;
        writeln!(f)?;
        part(f, "Non-VI", self.non_vi_days, &self.non_vi)
    }
}

/// One row of the execution ledger file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub symbol: String,
    pub date: NaiveDate,
    pub side: Side,
    pub qty: u64,
    pub avg_exec: Option<f64>,
    pub vwap: f64,
    pub perf_bp: Option<f64>,
    pub vi_flag: bool,
}

impl From<&SimResult> for LedgerRow {
    fn from(r: &SimResult) -> Self {
        Self {
            symbol: r.symbol.clone(),
            date: r.date,
            side: r.side,
            qty: r.filled_qty,
            avg_exec: r.avg_exec,
            vwap: r.vwap,
            perf_bp: r.perf_bp,
            vi_flag: r.flags.vi_day,
        }
    }
}

pub fn write_ledger(path: impl AsRef<Path>, results: &[SimResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in results {
        w.serialize(LedgerRow::from(r))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<LedgerRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}
