//! Student-t location-scale distribution: parameters, link functions and
//! negative log-likelihood (scalar and on-tape).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::numcore::{Tape, Tensor, Var};
use crate::Result;

/// Added to the degrees of freedom on top of `df_floor + softplus(raw)` so
/// that `df > df_floor` survives rounding when softplus underflows.
pub const DF_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentT {
    pub df: f64,
    pub loc: f64,
    pub scale: f64,
}

impl StudentT {
    /// Negative log density at `x`.
    pub fn nll(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        let nu = self.df;
        -ln_gamma(0.5 * (nu + 1.0))
            + ln_gamma(0.5 * nu)
            + 0.5 * (nu * PI).ln()
            + self.scale.ln()
            + 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
    }

    /// Variance `scale^2 * df / (df - 2)`; infinite when `df <= 2`.
    pub fn variance(&self) -> f64 {
        if self.df > 2.0 {
            self.scale * self.scale * self.df / (self.df - 2.0)
        } else {
            f64::INFINITY
        }
    }

    /// Standard deviation of the distribution (not the scale parameter).
    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// One distribution per horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub steps: Vec<StudentT>,
}

impl StudentTParams {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn first(&self) -> &StudentT {
        &self.steps[0]
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Maps raw head outputs `(a, mu, b)` to `(df, loc, scale)`.
pub fn link(
    raw_df: f64,
    raw_loc: f64,
    raw_scale: f64,
    df_floor: f64,
    scale_floor: f64,
) -> StudentT {
    StudentT {
        df: df_floor + softplus(raw_df) + DF_MARGIN,
        loc: raw_loc,
        scale: scale_floor + softplus(raw_scale),
    }
}

/// Mean negative log-likelihood over horizon steps.
pub fn student_t_nll(params: &StudentTParams, target: &[f64]) -> f64 {
    assert_eq!(params.steps.len(), target.len(), "horizon mismatch");
    params
        .steps
        .iter()
        .zip(target)
        .map(|(d, &x)| d.nll(x))
        .sum::<f64>()
        / target.len() as f64
}

/// Location per step.
pub fn greedy_predict(params: &StudentTParams) -> Vec<f64> {
    params.steps.iter().map(|d| d.loc).collect()
}

/// `loc + c * scale` where `gate` is set, `loc` elsewhere.
pub fn adjusted_predict(params: &StudentTParams, c: f64, gate: bool) -> Vec<f64> {
    params
        .steps
        .iter()
        .map(|d| if gate { d.loc + c * d.scale } else { d.loc })
        .collect()
}

/// On-tape link functions applied to an `H x 3` raw head output.
/// Returns `(df, loc, scale)`, each shaped `[H]`.
pub fn link_on_tape(
    tape: &mut Tape,
    raw: Var,
    df_floor: f64,
    scale_floor: f64,
) -> Result<(Var, Var, Var)> {
    let h = tape.shape(raw)[0];
    let a = tape.slice(raw, 1, 0, 1)?;
    let a = tape.reshape(a, &[h])?;
    let a = tape.softplus(a);
    let df = tape.add_scalar(a, df_floor + DF_MARGIN);
    let loc = tape.slice(raw, 1, 1, 1)?;
    let loc = tape.reshape(loc, &[h])?;
    let b = tape.slice(raw, 1, 2, 1)?;
    let b = tape.reshape(b, &[h])?;
    let b = tape.softplus(b);
    let scale = tape.add_scalar(b, scale_floor);
    Ok((df, loc, scale))
}

/// Mean Student-t negative log-likelihood of `target` recorded on the tape.
pub fn nll_on_tape(tape: &mut Tape, df: Var, loc: Var, scale: Var, target: &[f64]) -> Result<Var> {
    let x = tape.constant(Tensor::vector(target.to_vec()));
    let diff = tape.sub(x, loc)?;
    let z = tape.div(diff, scale)?;
    let z2 = tape.mul(z, z)?;
    let z2n = tape.div(z2, df)?;
    let tail = tape.log1p(z2n);
    let half_np1 = {
        let t = tape.add_scalar(df, 1.0);
        tape.scale(t, 0.5)
    };
    let tail = tape.mul(half_np1, tail)?;
    let lg_a = tape.lgamma(half_np1);
    let half_n = tape.scale(df, 0.5);
    let lg_b = tape.lgamma(half_n);
    let log_nu_pi = {
        let t = tape.scale(df, PI);
        let t = tape.log(t);
        tape.scale(t, 0.5)
    };
    let log_scale = tape.log(scale);
    let mut acc = tape.sub(lg_b, lg_a)?;
    acc = tape.add(acc, log_nu_pi)?;
    acc = tape.add(acc, log_scale)?;
    acc = tape.add(acc, tail)?;
    Ok(tape.mean(acc))
}
