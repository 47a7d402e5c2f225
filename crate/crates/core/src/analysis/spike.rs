//! Links between the forecaster's predicted spread and realized volume
//! ratios, and the gate that decides when to lean on that spread.

use super::ols::{ols_named, OlsResult};
use crate::{Error, Result};

/// Minimum rows for the spike regressions.
const MIN_ROWS: usize = 10;

fn check_aligned(pred_std: &[f64], volume_ratio: &[f64]) -> Result<()> {
    if pred_std.len() != volume_ratio.len() {
        return Err(Error::Shape {
            op: "spike regression",
            lhs: vec![pred_std.len()],
            rhs: vec![volume_ratio.len()],
        });
    }
    Ok(())
}

fn check_variance(name: &str, xs: &[f64]) -> Result<()> {
    let first = xs[0];
    if xs.iter().all(|&x| x == first) {
        return Err(Error::Invalid(format!(
            "regressor `{name}` has zero variance"
        )));
    }
    Ok(())
}

fn diffs(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Volume ratio regressed on predicted standard deviation, with intercept.
pub fn spike_level_regression(pred_std: &[f64], volume_ratio: &[f64]) -> Result<OlsResult> {
    check_aligned(pred_std, volume_ratio)?;
    if pred_std.len() <= MIN_ROWS {
        return Err(Error::Insufficient(format!(
            "level regression needs more than {MIN_ROWS} rows, got {}",
            pred_std.len()
        )));
    }
    check_variance("pred_std", pred_std)?;
    let rows: Vec<Vec<f64>> = pred_std.iter().map(|&s| vec![s]).collect();
    ols_named(&["pred_std".to_string()], &rows, volume_ratio, true)
}

/// First difference of the predicted standard deviation regressed on the
/// first difference of the volume ratio, over steps where the ratio rose.
pub fn spike_diff_regression(pred_std: &[f64], volume_ratio: &[f64]) -> Result<OlsResult> {
    check_aligned(pred_std, volume_ratio)?;
    if pred_std.len() < 3 {
        return Err(Error::Insufficient(
            "difference regression needs at least 3 points".into(),
        ));
    }
    let ds = diffs(pred_std);
    let dr = diffs(volume_ratio);
    let (x, y): (Vec<f64>, Vec<f64>) = dr
        .iter()
        .zip(&ds)
        .filter(|(r, _)| **r > 0.0)
        .map(|(r, s)| (*r, *s))
        .unzip();
    if x.len() < MIN_ROWS {
        return Err(Error::Insufficient(format!(
            "only {} steps with a rising volume ratio; need {MIN_ROWS}",
            x.len()
        )));
    }
    check_variance("d_volume_ratio", &x)?;
    let rows: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    ols_named(&["d_volume_ratio".to_string()], &rows, &y, true)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Gate per step: the predicted-std increase at `t` exceeds the median
/// std increase over earlier steps whose volume ratio rose.
///
/// Only steps `s < t` within the last `history_window` steps are used
/// (`0` means all earlier steps). With no qualifying history the gate is
/// closed. Depends on differences only, so shifting the std level leaves
/// it unchanged.
pub fn spike_gate(
    pred_std: &[f64],
    volume_ratio: &[f64],
    history_window: usize,
) -> Result<Vec<bool>> {
    check_aligned(pred_std, volume_ratio)?;
    let n = pred_std.len();
    let mut gate = vec![false; n];
    for t in 1..n {
        let d_std = pred_std[t] - pred_std[t - 1];
        let lo = if history_window == 0 {
            1
        } else {
            t.saturating_sub(history_window).max(1)
        };
        let mut hist: Vec<f64> = (lo..t)
            .filter(|&s| volume_ratio[s] > volume_ratio[s - 1])
            .map(|s| pred_std[s] - pred_std[s - 1])
            .collect();
        if !hist.is_empty() {
            gate[t] = d_std > median(&mut hist);
        }
    }
    Ok(gate)
}
