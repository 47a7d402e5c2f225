//! Ordinary least squares with classical inference statistics.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::{Error, Result};

/// |t| beyond which the two-sided p-value is reported as exactly zero.
const T_UNDERFLOW: f64 = 40.0;

/// Relative size of a QR pivot below which a column counts as collinear.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub coef: f64,
    pub std_err: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    /// Intercept first (named `const`) when fitted, then regressors in order.
    pub terms: Vec<Term>,
    pub r_squared: f64,
    pub f_stat: f64,
    pub f_p_value: f64,
    pub n: usize,
    pub dof: usize,
    pub intercept: bool,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl OlsResult {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.coef).collect()
    }
}

/// Two-sided p-value of a t statistic with `dof` degrees of freedom.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.abs() > T_UNDERFLOW {
        return 0.0;
    }
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t))
}

/// Upper-tail p-value of an F statistic.
pub fn f_upper_p(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f.is_infinite() {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// OLS of `y` on the rows of `x` (n rows of k regressors), with regressors
/// named `x1..xk`.
pub fn ols(x: &[Vec<f64>], y: &[f64], intercept: bool) -> Result<OlsResult> {
    let k = x.first().map_or(0, Vec::len);
    let names: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    ols_named(&names, x, y, intercept)
}

pub fn ols_named(
    names: &[String],
    x: &[Vec<f64>],
    y: &[f64],
    intercept: bool,
) -> Result<OlsResult> {
    let n = y.len();
    let k = names.len();
    if x.len() != n {
        return Err(Error::Shape {
            op: "ols",
            lhs: vec![x.len(), k],
            rhs: vec![n],
        });
    }
    if let Some(row) = x.iter().find(|r| r.len() != k) {
        return Err(Error::Shape {
            op: "ols",
            lhs: vec![row.len()],
            rhs: vec![k],
        });
    }
    let p = k + usize::from(intercept);
    if p == 0 {
        return Err(Error::Invalid("ols needs at least one column".into()));
    }
    if n <= p {
        return Err(Error::Insufficient(format!(
            "ols with {p} columns needs more than {p} rows, got {n}"
        )));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "ols input contains NaN or infinity".into(),
        ));
    }

    let mut col_names = Vec::with_capacity(p);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    if intercept {
        col_names.push("const".to_string());
        cols.push(vec![1.0; n]);
    }
    for (j, name) in names.iter().enumerate() {
        col_names.push(name.clone());
        cols.push(x.iter().map(|r| r[j]).collect());
    }

    let (r, qty) = householder_qr(&mut cols.clone(), y, &col_names)?;
    let beta = back_substitute(&r, &qty[..p]);
    let r_inv = upper_inverse(&r);

    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..p).map(|j| cols[j][i] * beta[j]).sum::<f64>())
        .collect();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let dof = n - p;
    let sigma2 = ssr / dof as f64;

    let sst = if intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let model_df = p - usize::from(intercept);
    let (f_stat, f_p_value) = if model_df == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let f = ((sst - ssr).max(0.0) / model_df as f64) / sigma2;
        (f, f_upper_p(f, model_df as f64, dof as f64))
    };

    let terms = (0..p)
        .map(|j| {
            let var = sigma2 * r_inv[j].iter().map(|v| v * v).sum::<f64>();
            let std_err = var.sqrt();
            let t_stat = beta[j] / std_err;
            Term {
                name: col_names[j].clone(),
                coef: beta[j],
                std_err,
                t_stat,
                p_value: t_two_sided_p(t_stat, dof as f64),
            }
        })
        .collect();

    Ok(OlsResult {
        terms,
        r_squared,
        f_stat,
        f_p_value,
        n,
        dof,
        intercept,
        residuals,
    })
}

/// In-place Householder QR of the column-major `cols`; returns the upper
/// triangle `R` (row-major, p x p) and `Q^T y`.
fn householder_qr(
    cols: &mut [Vec<f64>],
    y: &[f64],
    names: &[String],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let p = cols.len();
    let n = y.len();
    let mut qty = y.to_vec();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        let alpha_norm = cols[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norms[j] == 0.0 || alpha_norm <= RANK_TOL * norms[j] {
            return Err(Error::RankDeficient(names[j].clone()));
        }
        let alpha = if cols[j][j] > 0.0 {
            -alpha_norm
        } else {
            alpha_norm
        };
        let mut v: Vec<f64> = cols[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |target: &mut [f64]| {
            let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / vnorm2;
            target.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
        };
        for col in cols.iter_mut().skip(j + 1) {
            reflect(&mut col[j..n]);
        }
        reflect(&mut qty[j..n]);
        r[j][j] = alpha;
        for (c, col) in cols.iter().enumerate().skip(j + 1) {
            r[j][c] = col[j];
        }
    }
    Ok((r, qty))
}

fn back_substitute(r: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / r[i][i];
    }
    x
}

/// Inverse of an upper-triangular matrix, row-major.
fn upper_inverse(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = r.len();
    let mut inv = vec![vec![0.0; p]; p];
    for c in 0..p {
        let mut e = vec![0.0; p];
        e[c] = 1.0;
        let col = back_substitute(r, &e);
        for i in 0..p {
            inv[i][c] = col[i];
        }
    }
    inv
}

impl fmt::Display for OlsResult {
    /// Coefficient table followed by fit statistics.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .terms
            .iter()
            .map(|t| t.name.len())
            .max()
            .unwrap_or(0)
            .max(12);
        writeln!(
            f,
            "{:<w$} {:>14} {:>14} {:>12} {:>12}",
            "", "Coefficient", "Standard Error", "t-Statistic", "p-value"
        )?;
        for t in &self.terms {
            writeln!(
                f,
                "{:<w$} {:>14.4} {:>14.4} {:>12.4} {:>12}",
                t.name,
                t.coef,
                t.std_err,
                t.t_stat,
                format_p(t.p_value)
            )?;
        }
        writeln!(f, "R-squared    {:.6}", self.r_squared)?;
        writeln!(
            f,
            "F-statistic  {:.4} (p = {})",
            self.f_stat,
            format_p(self.f_p_value)
        )?;
        write!(f, "n = {}, dof = {}", self.n, self.dof)
    }
}

fn format_p(p: f64) -> String {
    if p == 0.0 || (p >= 1e-3 && p.is_finite()) {
        format!("{p:.3}")
    } else {
        format!("{p:.5e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Solves the normal equations by Gauss-Jordan elimination with partial
    /// pivoting, independently of the QR path.
    fn normal_equations(x: &[Vec<f64>], y: &[f64], intercept: bool) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut v = if intercept { vec![1.0] } else { vec![] };
                v.extend_from_slice(r);
                v
            })
            .collect();
        let p = rows[0].len();
        let mut a = vec![vec![0.0; p + 1]; p];
        for (r, &yi) in rows.iter().zip(y) {
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += r[i] * r[j];
                }
                a[i][p] += r[i] * yi;
            }
        }
        for c in 0..p {
            let piv = (c..p)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, piv);
            for i in 0..p {
                if i != c {
                    let f = a[i][c] / a[c][c];
                    for j in c..=p {
                        a[i][j] -= f * a[c][j];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let y = x
            .iter()
            .map(|r| {
                0.5 + r
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (j as f64 - 1.0) * v)
                    .sum::<f64>()
                    + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn exact_fit_without_intercept() {
        let r = ols(&[vec![1.0], vec![2.0], vec![3.0]], &[2.0, 4.0, 6.0], false).unwrap();
        assert!((r.terms[0].coef - 2.0).abs() < 1e-12);
        assert_eq!(r.r_squared, 1.0);
        assert_eq!(r.dof, 2);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (x, y) = random_problem(&mut rng, 50, 3);
            let got = ols(&x, &y, true).unwrap().coefficients();
            let want = normal_equations(&x, &y, true);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn residual_orthogonality_and_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = random_problem(&mut rng, 80, 4);
        let r = ols(&x, &y, true).unwrap();
        let n = y.len() as f64;
        assert!(r.residuals.iter().sum::<f64>().abs() < 1e-8 * n);
        for j in 0..4 {
            let dot: f64 = r.residuals.iter().zip(&x).map(|(e, row)| e * row[j]).sum();
            assert!(dot.abs() < 1e-8 * n);
        }
        let mean = y.iter().sum::<f64>() / n;
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ssr: f64 = r.residuals.iter().map(|e| e * e).sum();
        assert!((r.r_squared - (1.0 - ssr / sst)).abs() < 1e-12);
    }

    #[test]
    fn standard_errors_match_closed_form_simple_regression() {
        let x = [1.0, 2.0, 4.0, 5.0, 7.0, 8.0];
        let y = [1.2, 1.9, 4.3, 4.8, 7.4, 7.7];
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let r = ols(&rows, &y, true).unwrap();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let ssr: f64 = r.residuals.iter().map(|e| e * e).sum();
        let s2 = ssr / (n - 2.0);
        assert!((r.terms[1].std_err - (s2 / sxx).sqrt()).abs() < 1e-12);
        assert!((r.terms[0].std_err - (s2 * (1.0 / n + mx * mx / sxx)).sqrt()).abs() < 1e-12);
        // Simple regression: F equals t squared.
        assert!((r.f_stat - r.terms[1].t_stat.powi(2)).abs() < 1e-6 * r.f_stat);
        assert!((r.f_p_value - r.terms[1].p_value).abs() < 1e-9);
    }

    #[test]
    fn p_value_reference_points() {
        // t = 2.228 at 10 dof is the 97.5% quantile.
        assert!((t_two_sided_p(2.228138851986, 10.0) - 0.05).abs() < 1e-9);
        assert_eq!(t_two_sided_p(0.0, 7.0), 1.0);
        assert_eq!(t_two_sided_p(41.0, 3.0), 0.0);
        assert!((f_upper_p(4.964602743730711, 1.0, 10.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn collinear_column_is_named() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64 + 0.1 * (i % 3) as f64).collect();
        match ols(&x, &y, true) {
            Err(Error::RankDeficient(name)) => assert_eq!(name, "x2"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let x: Vec<Vec<f64>> = (0..10).map(|_| vec![3.0]).collect();
        assert!(matches!(ols(&x, &y, true), Err(Error::RankDeficient(n)) if n == "x1"));
    }

    #[test]
    fn too_few_rows() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(ols(&x, &[1.0, 2.0], true).is_err());
    }

    #[test]
    fn duplicated_rows_keep_coefficients_and_shrink_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, y) = random_problem(&mut rng, 40, 2);
        let a = ols(&x, &y, true).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let b = ols(&x2, &y2, true).unwrap();
        for (ta, tb) in a.terms.iter().zip(&b.terms) {
            assert!((ta.coef - tb.coef).abs() < 1e-10);
            assert!(tb.std_err < ta.std_err);
        }
    }

    #[test]
    fn report_lists_every_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = random_problem(&mut rng, 30, 2);
        let text = ols(&x, &y, true).unwrap().to_string();
        for needle in [
            "Coefficient",
            "Standard Error",
            "t-Statistic",
            "p-value",
            "const",
            "x1",
            "x2",
            "R-squared",
        ] {
            assert!(text.contains(needle), "missing {needle}");
        }
    }
}
