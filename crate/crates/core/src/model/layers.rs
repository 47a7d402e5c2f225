//! Parameter groups shared by the forecasters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution};

use crate::numcore::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.normal(format!("{name}.weight"), &[d_in, d_out], rng),
            b: store.zeros(format!("{name}.bias"), &[d_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add(y, p.var(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.ones(format!("{name}.gain"), &[d]),
            bias: store.zeros(format!("{name}.bias"), &[d]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        tape.layer_norm(x, p.var(self.gain), p.var(self.bias))
    }
}

/// Inverted dropout: zeroes entries with probability `rate` and rescales the
/// survivors. A no-op without an RNG or at rate 0.
pub(crate) fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let keep = Bernoulli::new(1.0 - rate).expect("rate in [0, 1)");
    let scale = 1.0 / (1.0 - rate);
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if keep.sample(rng) { scale } else { 0.0 })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask).expect("shape"));
    tape.mul(x, m).expect("same shape")
}
