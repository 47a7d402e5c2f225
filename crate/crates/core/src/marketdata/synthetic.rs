//! Seeded synthetic minute-bar universe with a U-shaped volume profile,
//! log-normal volume noise, Poisson volume spikes and geometric random-walk
//! prices.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Market, MetaTable, MinuteBar, StockMeta, TradingDay, DEFAULT_BARS_PER_DAY};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub bars_per_day: usize,
    /// Open (and close) intensity relative to the mid-session minimum.
    pub u_shape_depth: f64,
    /// Std of the per-minute log-normal volume noise.
    pub noise_sigma: f64,
    /// Expected volume spikes per day.
    pub spike_rate: f64,
    /// Typical volume multiplier of a spike minute.
    pub spike_scale: f64,
    /// Per-minute log-return std.
    pub price_vol: f64,
    /// Std of an extra log-return drawn at each spike minute (0 disables).
    pub spike_return_sigma: f64,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_stocks: 10,
            n_days: 60,
            bars_per_day: DEFAULT_BARS_PER_DAY,
            u_shape_depth: 3.0,
            noise_sigma: 0.3,
            spike_rate: 2.0,
            spike_scale: 8.0,
            price_vol: 0.001,
            spike_return_sigma: 0.0,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 2).expect("valid date"),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.n_stocks == 0 || self.n_days == 0 || self.bars_per_day == 0 {
            return bad("n_stocks, n_days and bars_per_day must be positive");
        }
        if !(self.u_shape_depth > 0.0 && self.u_shape_depth.is_finite()) {
            return bad("u_shape_depth must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative");
        }
        if !(self.spike_rate >= 0.0 && self.spike_rate.is_finite()) {
            return bad("spike_rate must be nonnegative");
        }
        if !(self.spike_scale > 0.0 && self.spike_scale.is_finite()) {
            return bad("spike_scale must be positive");
        }
        if !(self.price_vol >= 0.0 && self.price_vol.is_finite()) {
            return bad("price_vol must be nonnegative");
        }
        if !(self.spike_return_sigma >= 0.0 && self.spike_return_sigma.is_finite()) {
            return bad("spike_return_sigma must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Sorted by (symbol, date).
    pub days: Vec<TradingDay>,
    pub meta: MetaTable,
    /// Spike minutes per entry of `days`, sorted; repeats mean stacked spikes.
    pub spikes: Vec<Vec<usize>>,
}

/// Deterministic U-shaped intensity: 1 at mid-session (minute T/2) and
/// `depth` at minute 0, quadratic in between.
pub fn u_shape_intensity(minute: usize, bars_per_day: usize, depth: f64) -> f64 {
    let mid = (bars_per_day / 2) as f64;
    if mid == 0.0 {
        return 1.0;
    }
    let x = (minute as f64 - mid) / mid;
    1.0 + (depth - 1.0) * x * x
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let dates = business_days(config.start_date, config.n_days);
    let t = config.bars_per_day;
    let profile: Vec<f64> = (0..t)
        .map(|m| u_shape_intensity(m, t, config.u_shape_depth))
        .collect();
    let profile_sum: f64 = profile.iter().sum();
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let mut meta = MetaTable::new();
    let mut days = Vec::with_capacity(config.n_stocks * config.n_days);
    let mut spikes = Vec::with_capacity(days.capacity());
    for s in 0..config.n_stocks {
        let symbol = format!("S{s:03}");
        // One independent stream per stock keeps output independent of the
        // number of stocks generated before it.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s as u64 + 1);

        let shares = 10f64.powf(rng.gen_range(7.0..9.0)).round() as u64;
        let daily_volume = 10f64.powf(rng.gen_range(5.3..6.7));
        let mut price = 10f64.powf(rng.gen_range(1.0..2.5));
        meta.insert(
            symbol.clone(),
            StockMeta::new(symbol.clone(), shares.max(1), Market::SYNTH)?,
        );

        for &date in &dates {
            let level = daily_volume / profile_sum;
            let mut day_spikes: Vec<usize> = Vec::new();
            if config.spike_rate > 0.0 {
                let n: f64 = Poisson::new(config.spike_rate)
                    .expect("positive rate")
                    .sample(&mut rng);
                for _ in 0..n as usize {
                    day_spikes.push(rng.gen_range(0..t));
                }
                day_spikes.sort_unstable();
            }
            let mut bars = Vec::with_capacity(t);
            for (m, &intensity) in profile.iter().enumerate() {
                let noise = if config.noise_sigma > 0.0 {
                    (config.noise_sigma * standard.sample(&mut rng)).exp()
                } else {
                    1.0
                };
                let mut mult = 1.0;
                let mut jump = 0.0;
                for _ in day_spikes.iter().filter(|&&k| k == m) {
                    mult *= config.spike_scale.powf(rng.gen_range(0.5..1.5));
                    if config.spike_return_sigma > 0.0 {
                        jump += config.spike_return_sigma * standard.sample(&mut rng);
                    }
                }
                let volume = (level * intensity * noise * mult).round() as u64;

                let open = price;
                let ret = config.price_vol * standard.sample(&mut rng) + jump;
                let close = open * ret.exp();
                let wick_hi = (0.5 * config.price_vol * standard.sample(&mut rng)).abs();
                let wick_lo = (0.5 * config.price_vol * standard.sample(&mut rng)).abs();
                let high = open.max(close) * wick_hi.exp();
                let low = open.min(close) * (-wick_lo).exp();
                price = close;
                let typical = (high + low + close) / 3.0;
                bars.push(MinuteBar {
                    symbol: symbol.clone(),
                    date,
                    minute_index: m,
                    open,
                    high,
                    low,
                    close,
                    volume,
                    amount: volume as f64 * typical,
                });
            }
            days.push(TradingDay::new(symbol.clone(), date, bars)?);
            spikes.push(day_spikes);
        }
    }
    Ok(SyntheticData { days, meta, spikes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(n_days: usize) -> SyntheticConfig {
        SyntheticConfig {
            n_stocks: 2,
            n_days,
            bars_per_day: 390,
            noise_sigma: 0.0,
            spike_rate: 0.0,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn noise_off_gives_deterministic_u_shape() {
        let cfg = quiet(2);
        let data = generate_synthetic(&cfg).unwrap();
        for day in &data.days {
            // Every bar is the rounded deterministic intensity at a common
            // level; the mid bar pins that level to within half a share.
            let level = day.bars[195].volume as f64;
            for (m, bar) in day.bars.iter().enumerate() {
                let i = u_shape_intensity(m, 390, cfg.u_shape_depth);
                assert!((bar.volume as f64 - level * i).abs() <= 0.5 + 0.5 * i);
            }
        }
        assert!(data.spikes.iter().all(Vec::is_empty));
    }

    #[test]
    fn endpoint_to_mid_ratio_is_depth() {
        for depth in [1.5, 3.0, 7.25] {
            let r = u_shape_intensity(0, 390, depth) / u_shape_intensity(195, 390, depth);
            assert!((r - depth).abs() <= f64::EPSILON * depth);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SyntheticConfig {
            n_stocks: 3,
            n_days: 3,
            bars_per_day: 60,
            seed: 99,
            ..SyntheticConfig::default()
        };
        assert_eq!(
            generate_synthetic(&cfg).unwrap(),
            generate_synthetic(&cfg).unwrap()
        );
        let other = SyntheticConfig {
            seed: 100,
            ..cfg.clone()
        };
        assert_ne!(
            generate_synthetic(&cfg).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn stock_streams_are_independent_of_universe_size() {
        let small = SyntheticConfig {
            n_stocks: 1,
            n_days: 2,
            bars_per_day: 30,
            ..SyntheticConfig::default()
        };
        let big = SyntheticConfig {
            n_stocks: 4,
            ..small.clone()
        };
        let a = generate_synthetic(&small).unwrap();
        let b = generate_synthetic(&big).unwrap();
        assert_eq!(a.days[..2], b.days[..2]);
    }

    #[test]
    fn spike_rate_law_of_large_numbers() {
        let cfg = SyntheticConfig {
            n_stocks: 1,
            n_days: 1000,
            bars_per_day: 390,
            spike_rate: 2.0,
            seed: 5,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let mean = data.spikes.iter().map(Vec::len).sum::<usize>() as f64 / 1000.0;
        assert!((1.8..=2.2).contains(&mean), "mean spikes/day {mean}");
    }

    #[test]
    fn dates_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2023, 1, 6).unwrap(), 3);
        let wd: Vec<_> = d.iter().map(|d| d.weekday()).collect();
        assert_eq!(wd, vec![Weekday::Fri, Weekday::Mon, Weekday::Tue]);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SyntheticConfig {
            spike_scale: 0.0,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
        let cfg = SyntheticConfig {
            n_days: 0,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }
}
