//! Context-free Student-t forecaster: one distribution shared by every
//! window and horizon step. Serves as the no-signal reference.

use rand_chacha::ChaCha8Rng;

use super::student_t::{link, link_on_tape, nll_on_tape, StudentTParams};
use super::{Forecast, ModelConfig};
use crate::features::FeatureWindow;
use crate::numcore::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConstantStudentT {
    params: ParamStore,
    raw: ParamId,
    horizon: usize,
    df_floor: f64,
    scale_floor: f64,
}

/// Inverse of softplus for positive arguments.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl ConstantStudentT {
    /// Starts at df = floor + 3, loc = 0, scale = 1.
    pub fn new(horizon: usize, df_floor: f64, scale_floor: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config(
                "constant forecaster: horizon must be positive".into(),
            ));
        }
        let mut params = ParamStore::new();
        let init = vec![softplus_inv(3.0), 0.0, softplus_inv(1.0 - scale_floor)];
        let raw = params.register("raw", Tensor::matrix(1, 3, init)?);
        Ok(Self {
            params,
            raw,
            horizon,
            df_floor,
            scale_floor,
        })
    }

    /// Uses the horizon and head floors of a transformer config.
    pub fn like(config: &ModelConfig) -> Result<Self> {
        Self::new(config.horizon, config.df_floor, config.scale_floor)
    }

    pub fn distribution(&self) -> StudentTParams {
        let r = self.params.get(self.raw).data();
        let d = link(r[0], r[1], r[2], self.df_floor, self.scale_floor);
        StudentTParams {
            steps: vec![d; self.horizon],
        }
    }
}

impl Forecast for ConstantStudentT {
    fn label(&self) -> String {
        "constant".into()
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_loss(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        window: &FeatureWindow,
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if window.target.len() != self.horizon {
            return Err(Error::Invalid(format!(
                "window horizon {} does not match model horizon {}",
                window.target.len(),
                self.horizon
            )));
        }
        let row = binding.var(self.raw);
        let raw = tape.concat(&vec![row; self.horizon], 0)?;
        let (df, loc, scale) = link_on_tape(tape, raw, self.df_floor, self.scale_floor)?;
        nll_on_tape(tape, df, loc, scale, &window.target)
    }

    fn point_forecast(&self, _window: &FeatureWindow) -> Result<Vec<f64>> {
        Ok(vec![self.distribution().steps[0].loc; self.horizon])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_distribution() {
        let m = ConstantStudentT::new(3, 2.0, 1e-4).unwrap();
        let d = m.distribution();
        assert_eq!(d.steps.len(), 3);
        assert!((d.steps[0].df - 5.0).abs() < 1e-5);
        assert!((d.steps[0].scale - 1.0).abs() < 1e-12);
        assert_eq!(d.steps[0].loc, 0.0);
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for y in [1e-3, 0.5, 1.0, 7.0, 40.0] {
            assert!((super::super::softplus(softplus_inv(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
