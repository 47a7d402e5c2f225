use super::{Tape, Tensor, Var};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many entries per parameter (evenly strided);
    /// `None` checks all of them.
    pub max_entries_per_param: Option<usize>,
    /// Shrink the step (tenfold, at most four times) for any entry whose
    /// perturbation flips the sign of a ReLU input, so that the difference
    /// is taken within one differentiable piece. A single ReLU input within
    /// `step` of zero otherwise corrupts the estimate for every upstream
    /// parameter. The choice never looks at the analytic gradient.
    pub kink_aware: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_entries_per_param: None,
            kink_aware: false,
        }
    }
}

const KINK_REFINEMENTS: usize = 4;

fn eval<F>(f: &mut F, params: &[Tensor], track: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), track)).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Largest relative disagreement between reverse-mode gradients of the
/// scalar `f` and central finite differences, over the parameter entries:
/// `|analytic - fd| / max(1e-8, |analytic| + |fd|)`.
pub fn grad_check<F>(mut f: F, params: &[Tensor], opts: GradCheckOptions) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = eval(&mut f, params, true)?;
    let base_pattern = tape.relu_pattern();
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        let n = params[pi].numel();
        let stride = match opts.max_entries_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for j in (0..n).step_by(stride) {
            let orig = work[pi].data()[j];
            let mut h = opts.step;
            let mut refinements = 0;
            let fd = loop {
                work[pi].data_mut()[j] = orig + h;
                let (tp, _, op) = eval(&mut f, &work, false)?;
                work[pi].data_mut()[j] = orig - h;
                let (tm, _, om) = eval(&mut f, &work, false)?;
                work[pi].data_mut()[j] = orig;
                let crossed = opts.kink_aware
                    && (tp.relu_pattern() != base_pattern || tm.relu_pattern() != base_pattern);
                if !crossed || refinements == KINK_REFINEMENTS {
                    break (tp.value(op).item() - tm.value(om).item()) / (2.0 * h);
                }
                h /= 10.0;
                refinements += 1;
            };
            let a = grad.data()[j];
            let err = (a - fd).abs() / (1e-8f64).max(a.abs() + fd.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
