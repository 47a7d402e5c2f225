//! Recurrent point-forecast baselines (RNN, LSTM, bidirectional LSTM).
//!
//! Each reads the same window as the transformer: the context steps feed
//! the recurrence, and the final hidden state is concatenated with the stock
//! embedding and the future time encodings before a linear head emits one
//! value per horizon step. Training uses squared error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_window, BaselineKind, Forecast};
use crate::features::{FeatureWindow, N_FEATURES, TIME_DIMS};
use crate::numcore::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub hidden: usize,
    pub context: usize,
    pub horizon: usize,
    pub n_stocks: usize,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.context == 0 || self.horizon == 0 || self.n_stocks == 0 {
            return Err(Error::Config(
                "baseline: hidden, context, horizon and n_stocks must be positive".into(),
            ));
        }
        Ok(())
    }

    fn gates(&self) -> usize {
        match self.kind {
            BaselineKind::RnnHr => 1,
            BaselineKind::LstmHr | BaselineKind::BiLstmHr => 4,
        }
    }

    fn directions(&self) -> usize {
        match self.kind {
            BaselineKind::BiLstmHr => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    w_in: ParamId,
    w_rec: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct RecurrentBaseline {
    config: BaselineConfig,
    params: ParamStore,
    cells: Vec<Cell>,
    stock_embedding: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl RecurrentBaseline {
    pub fn new(config: BaselineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let g = config.gates();
        let mut store = ParamStore::new();
        let cells = (0..config.directions())
            .map(|d| {
                let name = if d == 0 { "forward" } else { "backward" };
                let w_in = store.normal(format!("{name}.w_in"), &[N_FEATURES, g * h], &mut rng);
                let w_rec = store.normal(format!("{name}.w_rec"), &[h, g * h], &mut rng);
                let mut b = Tensor::zeros(&[g * h]);
                if g == 4 {
                    // Forget-gate bias of 1 keeps early gradients flowing.
                    for j in h..2 * h {
                        b.data_mut()[j] = 1.0;
                    }
                }
                let bias = store.register(format!("{name}.bias"), b);
                Cell { w_in, w_rec, bias }
            })
            .collect();
        let stock_embedding =
            store.normal_std("stock_embedding", &[config.n_stocks, h], 0.1, &mut rng);
        let head_in = config.directions() * h + h + config.horizon * TIME_DIMS;
        let head_w = store.normal("head.weight", &[head_in, config.horizon], &mut rng);
        let head_b = store.zeros("head.bias", &[config.horizon]);
        Ok(Self {
            config,
            params: store,
            cells,
            stock_embedding,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn kind(&self) -> BaselineKind {
        self.config.kind
    }

    fn run_cell(
        &self,
        tape: &mut Tape,
        p: &Binding,
        cell: &Cell,
        inputs: Var,
        reverse: bool,
    ) -> Result<Var> {
        let h = self.config.hidden;
        let steps = tape.shape(inputs)[0];
        let projected = tape.matmul(inputs, p.var(cell.w_in))?;
        let projected = tape.add(projected, p.var(cell.bias))?;
        let mut state = tape.constant(Tensor::zeros(&[1, h]));
        let mut memory = tape.constant(Tensor::zeros(&[1, h]));
        for i in 0..steps {
            let t = if reverse { steps - 1 - i } else { i };
            let x_t = tape.slice(projected, 0, t, 1)?;
            let rec = tape.matmul(state, p.var(cell.w_rec))?;
            let z = tape.add(x_t, rec)?;
            match self.config.kind {
                BaselineKind::RnnHr => state = tape.tanh(z),
                BaselineKind::LstmHr | BaselineKind::BiLstmHr => {
                    let i_g = tape.slice(z, 1, 0, h)?;
                    let i_g = tape.sigmoid(i_g);
                    let f_g = tape.slice(z, 1, h, h)?;
                    let f_g = tape.sigmoid(f_g);
                    let c_new = tape.slice(z, 1, 2 * h, h)?;
                    let c_new = tape.tanh(c_new);
                    let o_g = tape.slice(z, 1, 3 * h, h)?;
                    let o_g = tape.sigmoid(o_g);
                    let keep = tape.mul(f_g, memory)?;
                    let write = tape.mul(i_g, c_new)?;
                    memory = tape.add(keep, write)?;
                    let squashed = tape.tanh(memory);
                    state = tape.mul(o_g, squashed)?;
                }
            }
        }
        Ok(state)
    }

    /// Records the forward pass; returns `[H]` point forecasts.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        p: &Binding,
        window: &FeatureWindow,
    ) -> Result<Var> {
        let cfg = &self.config;
        check_window(window, cfg.context, cfg.horizon, cfg.n_stocks)?;
        let inputs = tape.constant(Tensor::matrix(
            cfg.context,
            N_FEATURES,
            window.context.clone(),
        )?);
        let mut parts = Vec::with_capacity(4);
        for (d, cell) in self.cells.iter().enumerate() {
            parts.push(self.run_cell(tape, p, cell, inputs, d == 1)?);
        }
        parts.push(tape.embedding(p.var(self.stock_embedding), &[window.stock_id])?);
        parts.push(tape.constant(Tensor::matrix(
            1,
            cfg.horizon * TIME_DIMS,
            window.time_enc_future.clone(),
        )?));
        let features = tape.concat(&parts, 1)?;
        let out = tape.matmul(features, p.var(self.head_w))?;
        let out = tape.reshape(out, &[cfg.horizon])?;
        tape.add(out, p.var(self.head_b))
    }

    pub fn predict(&self, window: &FeatureWindow) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.forward_tape(&mut tape, &p, window)?;
        let v = tape.value(out).data().to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{} output", self.config.kind)));
        }
        Ok(v)
    }

    pub(crate) fn from_parts(config: BaselineConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_named(&params.to_named())?;
        Ok(model)
    }
}

impl Forecast for RecurrentBaseline {
    fn label(&self) -> String {
        self.config.kind.label().into()
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn sample_loss(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        window: &FeatureWindow,
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let pred = self.forward_tape(tape, binding, window)?;
        let target = tape.constant(Tensor::vector(window.target.clone()));
        let diff = tape.sub(pred, target)?;
        let sq = tape.mul(diff, diff)?;
        Ok(tape.mean(sq))
    }

    fn point_forecast(&self, window: &FeatureWindow) -> Result<Vec<f64>> {
        self.predict(window)
    }
}
