//! Mini-batch training with AdamW, early stopping on validation loss, and
//! point-forecast metrics.

mod optim;

use std::borrow::Cow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{FeatureWindow, WindowSource, WindowSpec};
use crate::model::Forecast;
use crate::numcore::{Tape, Tensor};
use crate::{Error, Result};

pub use optim::{adamw_step, adamw_step_lr, clip_grad_norm, AdamWState, LrSchedule, OptimConfig};

/// Indexed access to windows, either materialized or built on demand.
pub trait SampleSet: Sync {
    fn len(&self) -> usize;

    fn window(&self, index: usize) -> Cow<'_, FeatureWindow>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSet for Vec<FeatureWindow> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn window(&self, index: usize) -> Cow<'_, FeatureWindow> {
        Cow::Borrowed(&self[index])
    }
}

/// Windows materialized lazily from a [`WindowSource`].
#[derive(Debug, Clone, Copy)]
pub struct SpecSet<'a> {
    pub source: &'a WindowSource,
    pub specs: &'a [WindowSpec],
}

impl<'a> SpecSet<'a> {
    pub fn new(source: &'a WindowSource, specs: &'a [WindowSpec]) -> Self {
        Self { source, specs }
    }
}

impl SampleSet for SpecSet<'_> {
    fn len(&self) -> usize {
        self.specs.len()
    }

    fn window(&self, index: usize) -> Cow<'_, FeatureWindow> {
        Cow::Owned(self.source.materialize(&self.specs[index]))
    }
}

/// The three chronological partitions handed to [`train`].
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a dyn SampleSet,
    pub validation: &'a dyn SampleSet,
    pub test: &'a dyn SampleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

/// RMSE and MAE of paired predictions.
pub fn metrics(pred: &[f64], actual: &[f64]) -> Result<Metrics> {
    if pred.len() != actual.len() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![pred.len()],
            rhs: vec![actual.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::Insufficient(
            "metrics need at least one prediction".into(),
        ));
    }
    let n = pred.len() as f64;
    let (se, ae) = pred
        .iter()
        .zip(actual)
        .fold((0.0, 0.0), |(se, ae), (p, a)| {
            (se + (p - a).powi(2), ae + (p - a).abs())
        });
    Ok(Metrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        n: pred.len(),
    })
}

/// One-step-ahead point forecast against the first target of every window.
pub fn evaluate<M: Forecast + ?Sized>(model: &M, windows: &dyn SampleSet) -> Result<Metrics> {
    let pairs = (0..windows.len())
        .into_par_iter()
        .map(|i| {
            let w = windows.window(i);
            let p = model.point_forecast(&w)?;
            Ok((p[0], w.target[0]))
        })
        .collect::<Result<Vec<_>>>()?;
    let (pred, actual): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    metrics(&pred, &actual)
}

/// Mean evaluation-mode loss over at most `cap` evenly strided windows
/// (`cap == 0` scores all of them).
pub fn mean_loss<M: Forecast + ?Sized>(
    model: &M,
    windows: &dyn SampleSet,
    cap: usize,
) -> Result<f64> {
    let idx = strided(windows.len(), cap);
    if idx.is_empty() {
        return Err(Error::Insufficient("no windows to score".into()));
    }
    let losses = idx
        .par_iter()
        .map(|&i| model.eval_loss(&windows.window(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn strided(len: usize, cap: usize) -> Vec<usize> {
    if cap == 0 || len <= cap {
        return (0..len).collect();
    }
    (0..cap).map(|k| k * len / cap).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Outcome of a training run. Wall-clock time is kept out of the
/// serialized form so reports from identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub seed: u64,
    pub steps_run: usize,
    pub epochs_started: usize,
    /// Mean batch loss per optimizer step.
    pub train_loss: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    /// Step whose parameters were retained.
    pub best_step: usize,
    pub best_validation_loss: Option<f64>,
    pub stopped_early: bool,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub test_windows: usize,
    pub test: Option<Metrics>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Optimizes `model` on `data.train`.
///
/// Batch gradients are computed per sample in parallel and summed in batch
/// order, so results do not depend on the thread count. Parameters from the
/// best validation check are restored before scoring the test partition.
pub fn train<M: Forecast + ?Sized>(
    model: &mut M,
    data: TrainData<'_>,
    optim: &OptimConfig,
    seed: u64,
) -> Result<TrainReport> {
    optim.validate()?;
    if data.train.is_empty() {
        return Err(Error::Insufficient("training partition is empty".into()));
    }
    let started = Instant::now();
    let label = model.label();
    let n = data.train.len();
    let batch = optim.batch_size.min(n);

    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;
    let mut epoch = 0;

    let mut state = AdamWState::new(model.params().values());
    let mut report = TrainReport {
        model: label.clone(),
        seed,
        steps_run: 0,
        epochs_started: 1,
        train_loss: Vec::with_capacity(optim.max_steps),
        validation: Vec::new(),
        best_step: 0,
        best_validation_loss: None,
        stopped_early: false,
        train_windows: n,
        validation_windows: data.validation.len(),
        test_windows: data.test.len(),
        test: None,
        wall_clock_secs: 0.0,
    };
    let mut best_params: Option<Vec<Tensor>> = None;
    let mut stale = 0;

    for step in 1..=optim.max_steps {
        if cursor + batch > n {
            order.shuffle(&mut order_rng);
            cursor = 0;
            epoch += 1;
            report.epochs_started += 1;
        }
        let members = &order[cursor..cursor + batch];
        cursor += batch;
        let seeds: Vec<u64> = (0..batch).map(|_| dropout_rng.gen()).collect();

        let model_ref: &M = model;
        let per_sample = members
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(&i, &s)| {
                let w = data.train.window(i);
                let mut tape = Tape::new();
                let binding = model_ref.params().bind(&mut tape, true);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let loss = model_ref.sample_loss(&mut tape, &binding, &w, Some(&mut rng))?;
                let value = tape.value(loss).item();
                tape.backward(loss)?;
                Ok((value, model_ref.params().grads(&tape, &binding)))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut loss_sum = 0.0;
        let mut grads: Vec<Tensor> = model
            .params()
            .values()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        for (value, g) in per_sample {
            loss_sum += value;
            for (acc, gi) in grads.iter_mut().zip(g) {
                acc.data_mut()
                    .iter_mut()
                    .zip(gi.data())
                    .for_each(|(a, b)| *a += b);
            }
        }
        let loss = loss_sum / batch as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "{label}: training loss is {loss} at step {step}"
            )));
        }
        let inv = 1.0 / batch as f64;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= inv);
        }
        let norm = clip_grad_norm(&mut grads, optim.grad_clip);
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "{label}: gradient norm is {norm} at step {step}"
            )));
        }
        adamw_step_lr(
            model.params_mut().values_mut(),
            &grads,
            &mut state,
            optim,
            optim.lr_at(step),
        )?;
        report.train_loss.push(loss);
        report.steps_run = step;

        let check = step % optim.eval_every == 0 || step == optim.max_steps;
        if check && !data.validation.is_empty() {
            let v = mean_loss(&*model, data.validation, optim.val_max_windows)?;
            report.validation.push(ValidationPoint {
                step,
                epoch,
                loss: v,
            });
            if report.best_validation_loss.map_or(true, |b| v < b) {
                report.best_validation_loss = Some(v);
                report.best_step = step;
                best_params = Some(model.params().values().to_vec());
                stale = 0;
            } else {
                stale += 1;
                if optim.patience > 0 && stale >= optim.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }

    match best_params {
        Some(p) => model.params_mut().values_mut().clone_from_slice(&p),
        None => report.best_step = report.steps_run,
    }
    if !data.test.is_empty() {
        report.test = Some(evaluate(&*model, data.test)?);
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Means of consecutive non-overlapping blocks of `width` values; a trailing
/// partial block is dropped.
pub fn block_means(values: &[f64], width: usize) -> Vec<f64> {
    if width == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(width)
        .map(|c| c.iter().sum::<f64>() / width as f64)
        .collect()
}
