use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{perf_bp, ExecutionPlan, FillModelConfig, Side};
use crate::marketdata::{day_vwap, detect_vi, TradingDay};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OrderKind {
    Limit,
    Market,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub minute: usize,
    pub side: Side,
    pub qty: u64,
    pub kind: OrderKind,
    pub limit_price: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub minute: usize,
    pub qty: u64,
    pub price: f64,
    pub kind: OrderKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimFlags {
    pub used_first_sweep: bool,
    pub used_final_sweep: bool,
    pub vi_day: bool,
    /// A market sweep took more than the participation cap of its bar.
    pub liquidity_breach: bool,
    /// Nothing was scheduled, so execution price and performance are undefined.
    pub empty_plan: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub symbol: String,
    pub date: NaiveDate,
    pub side: Side,
    pub total_qty: u64,
    pub filled_qty: u64,
    pub avg_exec: Option<f64>,
    pub vwap: f64,
    pub perf_bp: Option<f64>,
    pub orders: Vec<Order>,
    pub fills: Vec<Fill>,
    pub flags: SimFlags,
}

fn cap_for(volume: u64, cap: f64) -> u64 {
    (cap * volume as f64).floor() as u64
}

/// Replays `plan` against `day`.
///
/// Before the first sweep each minute posts a limit order for its scheduled
/// quantity plus any unfilled carry, one half tick inside the bar open. It
/// fills at the limit when the bar trades strictly through it, up to the
/// participation cap. The first sweep market-fills the carry; limit orders
/// then resume until the final sweep, which market-fills the carry together
/// with every remaining scheduled minute. Market fills take the bar's
/// typical price moved against the trader by the slippage.
pub fn simulate_day(
    day: &TradingDay,
    plan: &ExecutionPlan,
    cfg: &FillModelConfig,
) -> Result<SimResult> {
    plan.validate()?;
    let t = day.len();
    if plan.per_minute_qty.len() != t {
        return Err(Error::Invalid(format!(
            "plan has {} minutes but the session has {t}",
            plan.per_minute_qty.len()
        )));
    }
    if plan.symbol != day.symbol || plan.date != day.date {
        return Err(Error::Invalid(format!(
            "plan for {} {} applied to {} {}",
            plan.symbol, plan.date, day.symbol, day.date
        )));
    }
    let (sweep1, sweep2) = cfg.sweep_minutes(t)?;
    let vwap = day_vwap(day)?;
    let half_tick = cfg.tick_size / 2.0;
    let slip = cfg.market_slippage_bp / 1e4;
    let side = plan.side;

    let mut flags = SimFlags {
        vi_day: detect_vi(day),
        empty_plan: plan.total_qty == 0,
        ..SimFlags::default()
    };
    let mut orders = Vec::new();
    let mut fills = Vec::new();
    let mut carry: u64 = 0;

    let market_fill = |m: usize,
                       qty: u64,
                       orders: &mut Vec<Order>,
                       fills: &mut Vec<Fill>,
                       flags: &mut SimFlags| {
        let bar = &day.bars[m];
        let price = match side {
            Side::Buy => bar.typical_price() * (1.0 + slip),
            Side::Sell => bar.typical_price() * (1.0 - slip),
        };
        if qty > cap_for(bar.volume, cfg.participation_cap) {
            flags.liquidity_breach = true;
        }
        orders.push(Order {
            minute: m,
            side,
            qty,
            kind: OrderKind::Market,
            limit_price: None,
        });
        fills.push(Fill {
            minute: m,
            qty,
            price,
            kind: OrderKind::Market,
        });
    };

    for m in 0..sweep2 {
        if m == sweep1 && carry > 0 {
            market_fill(m, carry, &mut orders, &mut fills, &mut flags);
            flags.used_first_sweep = true;
            carry = 0;
        }
        let want = carry + plan.per_minute_qty[m];
        if want == 0 {
            continue;
        }
        let bar = &day.bars[m];
        let (limit, crossed) = match side {
            Side::Buy => {
                let p = bar.open - half_tick;
                (p, bar.low < p)
            }
            Side::Sell => {
                let p = bar.open + half_tick;
                (p, bar.high > p)
            }
        };
        orders.push(Order {
            minute: m,
            side,
            qty: want,
            kind: OrderKind::Limit,
            limit_price: Some(limit),
        });
        let filled = if crossed {
            want.min(cap_for(bar.volume, cfg.participation_cap))
        } else {
            0
        };
        if filled > 0 {
            fills.push(Fill {
                minute: m,
                qty: filled,
                price: limit,
                kind: OrderKind::Limit,
            });
        }
        carry = want - filled;
    }

    let rest = carry + plan.per_minute_qty[sweep2..].iter().sum::<u64>();
    if rest > 0 {
        market_fill(sweep2, rest, &mut orders, &mut fills, &mut flags);
        flags.used_final_sweep = true;
    }

    let filled_qty: u64 = fills.iter().map(|f| f.qty).sum();
    let (avg_exec, perf) = if filled_qty > 0 {
        let notional: f64 = fills.iter().map(|f| f.qty as f64 * f.price).sum();
        let avg = notional / filled_qty as f64;
        (Some(avg), Some(perf_bp(avg, vwap, side)))
    } else {
        (None, None)
    };
    Ok(SimResult {
        symbol: day.symbol.clone(),
        date: day.date,
        side,
        total_qty: plan.total_qty,
        filled_qty,
        avg_exec,
        vwap,
        perf_bp: perf,
        orders,
        fills,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketdata::test_support::{date, day_from, flat_day};

    fn toy_cfg() -> FillModelConfig {
        FillModelConfig {
            participation_cap: 1.0,
            first_cancel_before_close: 3,
            final_cancel_before_close: 1,
            ..FillModelConfig::default()
        }
    }

    fn plan(day: &TradingDay, side: Side, qty: Vec<u64>) -> ExecutionPlan {
        ExecutionPlan {
            symbol: day.symbol.clone(),
            date: day.date,
            side,
            total_qty: qty.iter().sum(),
            per_minute_qty: qty,
        }
    }

    #[test]
    fn limit_fill_in_first_minute() {
        // Open 100.005 puts the bid at 100; the bar trades down to 99.
        let rows = [
            (100.005, 101.0, 99.0, 100.0, 1000),
            (100.0, 100.0, 100.0, 100.0, 1000),
            (100.0, 100.0, 100.0, 100.0, 1000),
            (100.0, 100.0, 100.0, 100.0, 1000),
        ];
        let day = day_from("A", date(2023, 1, 2), &rows);
        let p = plan(&day, Side::Buy, vec![10, 0, 0, 0]);
        let r = simulate_day(&day, &p, &toy_cfg()).unwrap();
        assert_eq!(r.filled_qty, 10);
        assert_eq!(r.fills.len(), 1);
        assert!((r.fills[0].price - 100.0).abs() < 1e-9);
        let vwap = day_vwap(&day).unwrap();
        let want = (vwap - r.avg_exec.unwrap()) / vwap * 1e4;
        assert!((r.perf_bp.unwrap() - want).abs() < 1e-9);
        assert!(!r.flags.used_first_sweep && !r.flags.used_final_sweep);
    }

    #[test]
    fn uncrossed_limits_go_to_first_sweep() {
        let day = flat_day("A", date(2023, 1, 2), 50.0, &[100; 6]);
        let p = plan(&day, Side::Buy, vec![4, 3, 3, 0, 0, 0]);
        let r = simulate_day(
            &day,
            &p,
            &FillModelConfig {
                participation_cap: 1.0,
                ..toy_cfg()
            },
        )
        .unwrap();
        assert_eq!(r.filled_qty, 10);
        assert_eq!(r.fills.len(), 1);
        assert_eq!(r.fills[0].minute, 3);
        assert_eq!(r.fills[0].kind, OrderKind::Market);
        assert!((r.fills[0].price - 50.0 * 1.0002).abs() < 1e-12);
        assert!(r.flags.used_first_sweep && !r.flags.used_final_sweep);
        assert!((r.perf_bp.unwrap() + 2.0).abs() < 1e-9);
    }

    #[test]
    fn final_sweep_collects_tail_schedule() {
        let day = flat_day("A", date(2023, 1, 2), 20.0, &[100; 6]);
        let p = plan(&day, Side::Sell, vec![0, 0, 0, 1, 2, 3]);
        let r = simulate_day(&day, &p, &toy_cfg()).unwrap();
        assert_eq!(r.filled_qty, 6);
        assert!(r.flags.used_final_sweep);
        let last = r.fills.last().unwrap();
        assert_eq!((last.minute, last.qty), (5, 6));
        assert!((r.avg_exec.unwrap() - 20.0 * (1.0 - 2e-4)).abs() < 1e-12);
    }

    #[test]
    fn participation_cap_limits_passive_fills() {
        let rows: Vec<(f64, f64, f64, f64, u64)> =
            (0..8).map(|_| (10.0, 10.5, 9.5, 10.0, 100)).collect();
        let day = day_from("A", date(2023, 1, 2), &rows);
        let p = plan(&day, Side::Buy, vec![50, 0, 0, 0, 0, 0, 0, 0]);
        let cfg = FillModelConfig {
            participation_cap: 0.1,
            ..toy_cfg()
        };
        let r = simulate_day(&day, &p, &cfg).unwrap();
        assert_eq!(r.filled_qty, 50);
        let limit_fills: Vec<&Fill> = r
            .fills
            .iter()
            .filter(|f| f.kind == OrderKind::Limit)
            .collect();
        assert!(limit_fills.iter().all(|f| f.qty <= 10));
        // Five minutes before the first sweep at 10 shares each.
        assert_eq!(limit_fills.iter().map(|f| f.qty).sum::<u64>(), 50);
    }

    #[test]
    fn breach_flag_when_sweep_exceeds_cap() {
        let day = flat_day("A", date(2023, 1, 2), 10.0, &[10; 4]);
        let p = plan(&day, Side::Buy, vec![100, 0, 0, 0]);
        let r = simulate_day(
            &day,
            &p,
            &FillModelConfig {
                participation_cap: 0.1,
                ..toy_cfg()
            },
        )
        .unwrap();
        assert_eq!(r.filled_qty, 100);
        assert!(r.flags.liquidity_breach);
    }

    #[test]
    fn empty_plan_has_no_fills() {
        let day = flat_day("A", date(2023, 1, 2), 10.0, &[10; 4]);
        let p = plan(&day, Side::Buy, vec![0; 4]);
        let r = simulate_day(&day, &p, &toy_cfg()).unwrap();
        assert!(r.fills.is_empty() && r.flags.empty_plan);
        assert_eq!(r.perf_bp, None);
    }

    #[test]
    fn mismatched_plan_rejected() {
        let day = flat_day("A", date(2023, 1, 2), 10.0, &[10; 4]);
        let p = plan(&day, Side::Buy, vec![1; 3]);
        assert!(simulate_day(&day, &p, &toy_cfg()).is_err());
        let mut p = plan(&day, Side::Buy, vec![1; 4]);
        p.total_qty = 5;
        assert!(simulate_day(&day, &p, &toy_cfg()).is_err());
    }
}
