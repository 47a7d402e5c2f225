//! Forecasters over [`FeatureWindow`]s: the transformer encoder-decoder with
//! a Student-t head, and the recurrent point-forecast baselines.

mod baseline;
mod checkpoint;
mod constant;
mod layers;
mod student_t;
mod transformer;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureWindow;
use crate::numcore::{Binding, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

pub use baseline::{BaselineConfig, RecurrentBaseline};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, AnyModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use constant::ConstantStudentT;
pub use student_t::{
    adjusted_predict, greedy_predict, link, link_on_tape, nll_on_tape, softplus, student_t_nll,
    StudentT, StudentTParams, DF_MARGIN,
};
pub use transformer::Forecaster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_mult: usize,
    pub context: usize,
    pub horizon: usize,
    pub n_stocks: usize,
    pub dropout: f64,
    pub df_floor: f64,
    pub scale_floor: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            enc_layers: 4,
            dec_layers: 4,
            ffn_mult: 4,
            context: 390,
            horizon: 3,
            n_stocks: 1,
            dropout: 0.1,
            df_floor: 2.0,
            scale_floor: 1e-4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model % 2 != 0 {
            return bad("d_model must be even for the sinusoidal table".into());
        }
        if self.horizon == 0 || self.context == 0 || self.n_stocks == 0 || self.ffn_mult == 0 {
            return bad("horizon, context, n_stocks and ffn_mult must be positive".into());
        }
        if !(self.df_floor > 0.0 && self.scale_floor > 0.0) {
            return bad("df_floor and scale_floor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    #[serde(rename = "RNN-HR")]
    RnnHr,
    #[serde(rename = "LSTM-HR")]
    LstmHr,
    #[serde(rename = "BiLSTM-HR")]
    BiLstmHr,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::RnnHr,
        BaselineKind::LstmHr,
        BaselineKind::BiLstmHr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::RnnHr => "RNN-HR",
            BaselineKind::LstmHr => "LSTM-HR",
            BaselineKind::BiLstmHr => "BiLSTM-HR",
        }
    }

    /// File-name friendly identifier.
    pub fn slug(self) -> &'static str {
        match self {
            BaselineKind::RnnHr => "rnn_hr",
            BaselineKind::LstmHr => "lstm_hr",
            BaselineKind::BiLstmHr => "bilstm_hr",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s) || k.slug() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown baseline `{s}`")))
    }
}

/// Sinusoidal table: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::Invalid(format!(
            "positional encoding needs even d_model, got {d_model}"
        )));
    }
    let mut data = vec![0.0; len * d_model];
    for p in 0..len {
        for i in 0..d_model / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[p * d_model + 2 * i] = angle.sin();
            data[p * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(len, d_model, data)
}

/// Shared training/evaluation surface of the forecasters.
pub trait Forecast: Sync {
    fn label(&self) -> String;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    fn horizon(&self) -> usize;

    /// Per-sample training loss. Dropout is active only when `rng` is given.
    fn sample_loss(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        window: &FeatureWindow,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var>;

    /// Point forecasts for every horizon step, in log-ratio units.
    fn point_forecast(&self, window: &FeatureWindow) -> Result<Vec<f64>>;

    /// Evaluation-mode loss without gradient tracking.
    fn eval_loss(&self, window: &FeatureWindow) -> Result<f64> {
        let mut tape = Tape::new();
        let binding = self.params().bind(&mut tape, false);
        let loss = self.sample_loss(&mut tape, &binding, window, None)?;
        Ok(tape.value(loss).item())
    }
}

pub(crate) fn check_window(
    window: &FeatureWindow,
    context: usize,
    horizon: usize,
    n_stocks: usize,
) -> Result<()> {
    use crate::features::{N_FEATURES, TIME_DIMS};
    if window.context_len != context || window.context.len() != context * N_FEATURES {
        return Err(Error::Invalid(format!(
            "window context length {} does not match model context {context}",
            window.context_len
        )));
    }
    if window.target.len() != horizon || window.time_enc_future.len() != horizon * TIME_DIMS {
        return Err(Error::Invalid(format!(
            "window horizon {} does not match model horizon {horizon}",
            window.target.len()
        )));
    }
    if window.stock_id >= n_stocks {
        return Err(Error::Invalid(format!(
            "stock id {} outside vocabulary of {n_stocks}",
            window.stock_id
        )));
    }
    Ok(())
}
