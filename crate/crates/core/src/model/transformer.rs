//! Encoder-decoder transformer with a Student-t distribution head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{dropout, LayerNorm, Linear};
use super::student_t::{link, link_on_tape, nll_on_tape, StudentTParams};
use super::{check_window, positional_encoding, Forecast, ModelConfig};
use crate::features::{FeatureWindow, N_FEATURES, TIME_DIMS};
use crate::numcore::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Large negative logit for masked attention slots.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        query: Var,
        memory: Var,
        mask: Option<Var>,
        n_heads: usize,
    ) -> Result<Var> {
        let q = self.q.forward(tape, p, query)?;
        let k = self.k.forward(tape, p, memory)?;
        let v = self.v.forward(tape, p, memory)?;
        let d = tape.shape(q)[1];
        let dh = d / n_heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let qh = tape.slice(q, 1, h * dh, dh)?;
            let kh = tape.slice(k, 1, h * dh, dh)?;
            let vh = tape.slice(v, 1, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let mut scores = tape.scale(scores, inv_sqrt);
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let weights = tape.softmax(scores);
            heads.push(tape.matmul(weights, vh)?);
        }
        let joined = tape.concat(&heads, 1)?;
        self.o.forward(tape, p, joined)
    }
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, d, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, p: &Binding, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.down.forward(tape, p, h)
    }
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: Attention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Attention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Transformer forecaster emitting a Student-t per horizon step.
///
/// Pre-norm residual blocks. Every encoder step receives the projected
/// context features plus the sinusoidal position and the stock embedding;
/// decoder queries are the projected time encodings of the target minutes,
/// with causal self-attention and cross-attention to the encoder output.
#[derive(Debug, Clone)]
pub struct Forecaster {
    config: ModelConfig,
    params: ParamStore,
    input_proj: Linear,
    time_proj: Linear,
    stock_embedding: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    head: Linear,
    enc_positions: Tensor,
    dec_positions: Tensor,
    causal_mask: Tensor,
}

impl Forecaster {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let hidden = d * config.ffn_mult;
        let mut store = ParamStore::new();
        let input_proj = Linear::new(&mut store, "input_proj", N_FEATURES, d, &mut rng);
        let time_proj = Linear::new(&mut store, "time_proj", TIME_DIMS, d, &mut rng);
        let stock_embedding =
            store.normal_std("stock_embedding", &[config.n_stocks, d], 0.1, &mut rng);
        let encoder = (0..config.enc_layers)
            .map(|i| {
                let n = format!("encoder.{i}");
                EncoderLayer {
                    ln_attn: LayerNorm::new(&mut store, &format!("{n}.ln_attn"), d),
                    attn: Attention::new(&mut store, &format!("{n}.attn"), d, &mut rng),
                    ln_ffn: LayerNorm::new(&mut store, &format!("{n}.ln_ffn"), d),
                    ffn: FeedForward::new(&mut store, &format!("{n}.ffn"), d, hidden, &mut rng),
                }
            })
            .collect();
        let encoder_norm = LayerNorm::new(&mut store, "encoder.norm", d);
        let decoder = (0..config.dec_layers)
            .map(|i| {
                let n = format!("decoder.{i}");
                DecoderLayer {
                    ln_self: LayerNorm::new(&mut store, &format!("{n}.ln_self"), d),
                    self_attn: Attention::new(&mut store, &format!("{n}.self_attn"), d, &mut rng),
                    ln_cross: LayerNorm::new(&mut store, &format!("{n}.ln_cross"), d),
                    cross_attn: Attention::new(&mut store, &format!("{n}.cross_attn"), d, &mut rng),
                    ln_ffn: LayerNorm::new(&mut store, &format!("{n}.ln_ffn"), d),
                    ffn: FeedForward::new(&mut store, &format!("{n}.ffn"), d, hidden, &mut rng),
                }
            })
            .collect();
        let decoder_norm = LayerNorm::new(&mut store, "decoder.norm", d);
        let head = Linear {
            w: store.normal_std("head.weight", &[d, 3], 0.01, &mut rng),
            b: store.zeros("head.bias", &[3]),
        };

        let table = positional_encoding(config.context + config.horizon, d)?;
        let (enc, dec) = table.data().split_at(config.context * d);
        let enc_positions = Tensor::matrix(config.context, d, enc.to_vec())?;
        let dec_positions = Tensor::matrix(config.horizon, d, dec.to_vec())?;
        let h = config.horizon;
        let mut mask = vec![0.0; h * h];
        for i in 0..h {
            for j in i + 1..h {
                mask[i * h + j] = MASKED;
            }
        }
        let causal_mask = Tensor::matrix(h, h, mask)?;

        Ok(Self {
            config,
            params: store,
            input_proj,
            time_proj,
            stock_embedding,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            head,
            enc_positions,
            dec_positions,
            causal_mask,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Records the forward pass and returns the raw `H x 3` head output.
    pub fn forward_raw(
        &self,
        tape: &mut Tape,
        p: &Binding,
        window: &FeatureWindow,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        check_window(window, cfg.context, cfg.horizon, cfg.n_stocks)?;
        let rate = cfg.dropout;

        let emb = tape.embedding(p.var(self.stock_embedding), &[window.stock_id])?;
        let emb = tape.reshape(emb, &[cfg.d_model])?;

        let ctx = tape.constant(Tensor::matrix(
            cfg.context,
            N_FEATURES,
            window.context.clone(),
        )?);
        let mut x = self.input_proj.forward(tape, p, ctx)?;
        let pos = tape.constant(self.enc_positions.clone());
        x = tape.add(x, pos)?;
        x = tape.add(x, emb)?;
        x = dropout(tape, x, rate, rng.as_deref_mut());
        for layer in &self.encoder {
            let h = layer.ln_attn.forward(tape, p, x)?;
            let h = layer.attn.forward(tape, p, h, h, None, cfg.n_heads)?;
            let h = dropout(tape, h, rate, rng.as_deref_mut());
            x = tape.add(x, h)?;
            let h = layer.ln_ffn.forward(tape, p, x)?;
            let h = layer.ffn.forward(tape, p, h)?;
            let h = dropout(tape, h, rate, rng.as_deref_mut());
            x = tape.add(x, h)?;
        }
        let memory = self.encoder_norm.forward(tape, p, x)?;

        let fut = tape.constant(Tensor::matrix(
            cfg.horizon,
            TIME_DIMS,
            window.time_enc_future.clone(),
        )?);
        let mut y = self.time_proj.forward(tape, p, fut)?;
        let pos = tape.constant(self.dec_positions.clone());
        y = tape.add(y, pos)?;
        y = tape.add(y, emb)?;
        let mask = tape.constant(self.causal_mask.clone());
        for layer in &self.decoder {
            let h = layer.ln_self.forward(tape, p, y)?;
            let h = layer
                .self_attn
                .forward(tape, p, h, h, Some(mask), cfg.n_heads)?;
            let h = dropout(tape, h, rate, rng.as_deref_mut());
            y = tape.add(y, h)?;
            let h = layer.ln_cross.forward(tape, p, y)?;
            let h = layer
                .cross_attn
                .forward(tape, p, h, memory, None, cfg.n_heads)?;
            let h = dropout(tape, h, rate, rng.as_deref_mut());
            y = tape.add(y, h)?;
            let h = layer.ln_ffn.forward(tape, p, y)?;
            let h = layer.ffn.forward(tape, p, h)?;
            let h = dropout(tape, h, rate, rng.as_deref_mut());
            y = tape.add(y, h)?;
        }
        let y = self.decoder_norm.forward(tape, p, y)?;
        self.head.forward(tape, p, y)
    }

    /// Evaluation-mode distribution forecast for every horizon step.
    pub fn forward(&self, window: &FeatureWindow) -> Result<StudentTParams> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let raw = self.forward_raw(&mut tape, &p, window, None)?;
        let raw = tape.value(raw).data();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "forecaster output for {} {} minute {}",
                window.symbol, window.target_date, window.target_minute
            )));
        }
        let steps = raw
            .chunks(3)
            .map(|r| {
                link(
                    r[0],
                    r[1],
                    r[2],
                    self.config.df_floor,
                    self.config.scale_floor,
                )
            })
            .collect();
        Ok(StudentTParams { steps })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_named(&params.to_named())?;
        Ok(model)
    }
}

impl Forecast for Forecaster {
    fn label(&self) -> String {
        "IVE".into()
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
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let raw = self.forward_raw(tape, binding, window, rng)?;
        let (df, loc, scale) =
            link_on_tape(tape, raw, self.config.df_floor, self.config.scale_floor)?;
        nll_on_tape(tape, df, loc, scale, &window.target)
    }

    fn point_forecast(&self, window: &FeatureWindow) -> Result<Vec<f64>> {
        Ok(super::greedy_predict(&self.forward(window)?))
    }
}
