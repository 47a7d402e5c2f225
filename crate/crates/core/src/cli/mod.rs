//! Command-line front end: one subcommand per pipeline, a single TOML
//! config per run, and seeded, thread-count independent outputs.

mod config;
mod output;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    compute_market_features, performance_regression, spike_diff_regression, spike_gate,
    spike_level_regression,
};
use crate::execsim::{aggregate_stats, read_ledger, vi_stress, write_ledger, ExecutionPlan, Side};
use crate::features::{ratio_from_log, split_by_date, DatasetSplit, WindowSource, WindowSpec};
use crate::marketdata::{
    generate_synthetic, load_meta, load_minute_bars, write_meta, write_minute_bars, MetaTable,
    TradingDay,
};
use crate::model::{
    adjusted_predict, load_checkpoint, save_checkpoint, AnyModel, BaselineConfig, Forecaster,
    RecurrentBaseline, StudentT, StudentTParams,
};
use crate::training::{evaluate, train, Metrics, SpecSet, TrainData};
use crate::{Error, Result};

pub use config::{
    BacktestSection, BaselineSection, DataConfig, EvalSection, ModelName, Partition, PerfSection,
    RatioUnits, RunConfig, SpikeSection, SplitConfig, TrainSection,
};
pub use output::Outputs;

#[derive(Debug, Parser)]
#[command(
    name = "ive",
    version,
    about = "Intraday volume forecasting and VWAP execution experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization, sampling and dropout.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 gives a fully sequential run.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic bar file and metadata table.
    Synth,
    /// Train the transformer and the recurrent baselines.
    Train,
    /// Score trained checkpoints with RMSE and MAE.
    Eval,
    /// Simulate forecast-driven VWAP execution.
    Backtest,
    /// Regress realized volume ratios on predicted spread.
    SpikeAnalysis,
    /// Attribute backtest performance to daily market descriptors.
    PerfRegression,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Backtest => "backtest",
            Command::SpikeAnalysis => "spike-analysis",
            Command::PerfRegression => "perf-regression",
        }
    }
}

/// Merges the config file with command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synthetic.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Ignore a second initialization within one process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let mut cfg = resolve_config(cli)?;
    let out_dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
    let mut out = Outputs::create(&out_dir)?;
    match cli.command {
        Command::Synth => synth(&mut cfg, &mut out)?,
        Command::Train => train_cmd(&mut cfg, &mut out)?,
        Command::Eval => eval_cmd(&mut cfg, &mut out)?,
        Command::Backtest => backtest_cmd(&mut cfg, &mut out)?,
        Command::SpikeAnalysis => spike_cmd(&mut cfg, &mut out)?,
        Command::PerfRegression => perf_cmd(&mut cfg, &mut out)?,
    }
    // The output location is implied by where the file lands; leaving it out
    // keeps reruns into different directories byte-identical.
    cfg.out = None;
    out.write(
        &format!("resolved_config.{}.toml", cli.command.name()),
        cfg.to_toml()?,
    )?;
    out.commit()
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Invalid(e.to_string()))
}

fn note(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

struct Dataset {
    days: Vec<TradingDay>,
    meta: MetaTable,
}

impl Dataset {
    fn dates(&self) -> Vec<NaiveDate> {
        self.days
            .iter()
            .map(|d| d.date)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Loads the configured files or generates the synthetic universe, then
/// pins data-dependent settings into `cfg`.
fn load_data(cfg: &mut RunConfig) -> Result<Dataset> {
    let ds = match (&cfg.data.bars, &cfg.data.meta) {
        (Some(bars), Some(meta_path)) => {
            let meta = load_meta(meta_path)?;
            let (days, report) = load_minute_bars(bars, &meta, cfg.data.bars_per_day)?;
            for r in &report.rejected {
                note(format!(
                    "warning: dropped {} {} ({} minutes missing)",
                    r.symbol, r.date, r.missing
                ));
            }
            if report.filled_minutes > 0 {
                note(format!(
                    "warning: filled {} missing minutes with zero volume",
                    report.filled_minutes
                ));
            }
            if report.missing_days > 0 {
                note(format!(
                    "warning: {} weekdays without any rows",
                    report.missing_days
                ));
            }
            Dataset { days, meta }
        }
        _ => {
            let s = generate_synthetic(&cfg.synthetic)?;
            cfg.data.bars_per_day = cfg.synthetic.bars_per_day;
            Dataset {
                days: s.days,
                meta: s.meta,
            }
        }
    };
    if ds.days.is_empty() {
        return Err(Error::Insufficient("no trading days loaded".into()));
    }
    cfg.model.n_stocks = ds.meta.len();
    cfg.split.resolve(&ds.dates())?;
    Ok(ds)
}

fn split_specs(cfg: &RunConfig, source: &WindowSource) -> Result<DatasetSplit<WindowSpec>> {
    let (train_end, val_end) = cfg.split.ends()?;
    let (split, warnings) = split_by_date(source.specs(), train_end, val_end)?;
    for w in warnings {
        note(format!("warning: {w}"));
    }
    Ok(split)
}

fn partition<'a>(split: &'a DatasetSplit<WindowSpec>, p: Partition) -> &'a [WindowSpec] {
    match p {
        Partition::Train => &split.train,
        Partition::Validation => &split.validation,
        Partition::Test => &split.test,
    }
}

fn partition_dates(cfg: &RunConfig, dates: &[NaiveDate], p: Partition) -> Result<Vec<NaiveDate>> {
    let (train_end, val_end) = cfg.split.ends()?;
    Ok(dates
        .iter()
        .copied()
        .filter(|d| match p {
            Partition::Train => *d <= train_end,
            Partition::Validation => *d > train_end && *d <= val_end,
            Partition::Test => *d > val_end,
        })
        .collect())
}

fn synth(cfg: &mut RunConfig, out: &mut Outputs) -> Result<()> {
    let data = generate_synthetic(&cfg.synthetic)?;
    write_minute_bars(out.track("bars.csv"), &data.days)?;
    write_meta(out.track("meta.csv"), &data.meta)?;
    let mut spikes = String::from("symbol,date,minute\n");
    for (day, minutes) in data.days.iter().zip(&data.spikes) {
        for m in minutes {
            spikes.push_str(&format!("{},{},{m}\n", day.symbol, day.date));
        }
    }
    out.write("spikes.csv", spikes)?;
    note(format!("wrote {} stock-days", data.days.len()));
    Ok(())
}

fn build_model(cfg: &RunConfig, name: ModelName, seed: u64) -> Result<AnyModel> {
    Ok(match name.baseline() {
        None => Forecaster::new(cfg.model.clone(), seed)?.into(),
        Some(kind) => RecurrentBaseline::new(
            BaselineConfig {
                kind,
                hidden: cfg.baseline.hidden,
                context: cfg.model.context,
                horizon: cfg.model.horizon,
                n_stocks: cfg.model.n_stocks,
            },
            seed,
        )?
        .into(),
    })
}

fn train_cmd(cfg: &mut RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(cfg)?;
    let source = WindowSource::new(&data.days, &data.meta, cfg.model.context, cfg.model.horizon)?;
    let split = split_specs(cfg, &source)?;
    let train_set = SpecSet::new(&source, &split.train);
    let val_set = SpecSet::new(&source, &split.validation);
    let test_set = SpecSet::new(&source, &split.test);
    let sets = TrainData {
        train: &train_set,
        validation: &val_set,
        test: &test_set,
    };
    for (i, &name) in cfg.train.models.iter().enumerate() {
        let init_seed = cfg.seed.wrapping_add(i as u64);
        let mut model = build_model(cfg, name, init_seed)?;
        note(format!(
            "training {} on {} windows",
            name.label(),
            split.train.len()
        ));
        let report = train(&mut model, sets, &cfg.optim, cfg.seed)?;
        note(format!(
            "{}: {} steps in {:.1}s, best step {}",
            name.label(),
            report.steps_run,
            report.wall_clock_secs,
            report.best_step
        ));
        save_checkpoint(out.track(&name.checkpoint_file()), &model)?;
        out.write(
            &format!("train_report_{}.json", name.slug()),
            json(&report)?,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    model: &'static str,
    rmse: f64,
    mae: f64,
    n: usize,
}

fn eval_cmd(cfg: &mut RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(cfg)?;
    let source = WindowSource::new(&data.days, &data.meta, cfg.model.context, cfg.model.horizon)?;
    let split = split_specs(cfg, &source)?;
    let specs = partition(&split, cfg.eval.partition);
    if specs.is_empty() {
        return Err(Error::Insufficient(format!(
            "{:?} partition has no windows",
            cfg.eval.partition
        )));
    }
    let set = SpecSet::new(&source, specs);
    let dir = cfg.checkpoint_dir()?.to_path_buf();
    let mut models = cfg.eval.models.clone();
    models.sort();
    let mut rows = Vec::new();
    for name in models {
        let model = load_checkpoint(dir.join(name.checkpoint_file()))?;
        let Metrics { rmse, mae, n } = evaluate(&model, &set)?;
        rows.push(EvalRow {
            model: name.label(),
            rmse,
            mae,
            n,
        });
    }
    let mut table = format!("{:<12}{:>10}{:>10}\n", "Model", "RMSE", "MAE");
    let mut csv = String::from("model,rmse,mae,n\n");
    for r in &rows {
        table.push_str(&format!("{:<12}{:>10.4}{:>10.4}\n", r.model, r.rmse, r.mae));
        csv.push_str(&format!("{},{},{},{}\n", r.model, r.rmse, r.mae, r.n));
    }
    print!("{table}");
    out.write("eval_table.txt", table)?;
    out.write("eval.csv", csv)?;
    Ok(())
}

fn load_transformer(cfg: &RunConfig) -> Result<Forecaster> {
    let path = cfg.checkpoint_dir()?.join(ModelName::Ive.checkpoint_file());
    match load_checkpoint(&path)? {
        AnyModel::Transformer(m) => Ok(m),
        AnyModel::Recurrent(_) => Err(Error::Checkpoint(format!(
            "{} is not a transformer checkpoint",
            path.display()
        ))),
    }
}

/// One-step forecast distributions for every minute of `day`; `None` where
/// too little history precedes the minute.
fn day_forecasts(
    model: &Forecaster,
    source: &WindowSource,
    day: &TradingDay,
) -> Result<Vec<Option<StudentT>>> {
    (0..day.len())
        .into_par_iter()
        .map(|m| match source.spec_for_target(&day.symbol, day.date, m) {
            Some(spec) => Ok(Some(model.forward(&source.materialize(&spec))?.steps[0])),
            None => Ok(None),
        })
        .collect()
}

struct Pick<'a> {
    day: &'a TradingDay,
    side: Side,
    qty: u64,
}

/// Seeded draw of stocks, sides and order sizes per trading date. Sizes
/// use the stock's previous session volume, so a stock's first day is never
/// drawn.
fn sample_orders<'a>(cfg: &RunConfig, data: &'a Dataset, dates: &[NaiveDate]) -> Vec<Pick<'a>> {
    let mut by_date: BTreeMap<NaiveDate, Vec<(&'a TradingDay, u64)>> = BTreeMap::new();
    let mut prev: BTreeMap<&str, u64> = BTreeMap::new();
    let mut ordered: Vec<&TradingDay> = data.days.iter().collect();
    ordered.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));
    for d in ordered {
        if let Some(&v) = prev.get(d.symbol.as_str()) {
            by_date.entry(d.date).or_default().push((d, v));
        }
        prev.insert(&d.symbol, d.total_volume);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut picks = Vec::new();
    for date in dates {
        let Some(cands) = by_date.get_mut(date) else {
            continue;
        };
        cands.sort_by(|a, b| a.0.symbol.cmp(&b.0.symbol));
        cands.shuffle(&mut rng);
        for &(day, prev_volume) in cands.iter().take(cfg.backtest.stocks_per_day) {
            let side = if rng.gen_bool(0.5) {
                Side::Buy
            } else {
                Side::Sell
            };
            let qty =
                ((cfg.backtest.target_participation * prev_volume as f64).round() as u64).max(1);
            picks.push(Pick { day, side, qty });
        }
    }
    picks
}

fn first_step(d: &StudentT) -> StudentTParams {
    StudentTParams { steps: vec![*d] }
}

fn backtest_cmd(cfg: &mut RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(cfg)?;
    let model = load_transformer(cfg)?;
    let mcfg = model.config().clone();
    let source = WindowSource::new(&data.days, &data.meta, mcfg.context, mcfg.horizon)?;
    let dates = partition_dates(cfg, &data.dates(), cfg.backtest.partition)?;
    let picks = sample_orders(cfg, &data, &dates);
    if picks.is_empty() {
        return Err(Error::Insufficient(
            "no stock-days available to backtest".into(),
        ));
    }
    let bt = cfg.backtest.clone();
    let plans = picks
        .iter()
        .map(|p| {
            let t = p.day.len();
            let dists = day_forecasts(&model, &source, p.day)?;
            let y: Vec<f64> = if bt.adjust {
                let std: Vec<f64> = dists
                    .iter()
                    .map(|d| d.map_or(0.0, |d| d.std_dev()))
                    .collect();
                let realized = crate::features::ratio_transform(p.day)?.y;
                let gate = spike_gate(&std, &realized, bt.history_window)?;
                dists
                    .iter()
                    .zip(&gate)
                    .map(|(d, &g)| {
                        d.map_or(0.0, |d| {
                            adjusted_predict(&first_step(&d), bt.adjust_c, g)[0]
                        })
                    })
                    .collect()
            } else {
                dists.iter().map(|d| d.map_or(0.0, |d| d.loc)).collect()
            };
            let ratios: Vec<f64> = y.iter().map(|v| ratio_from_log(*v, t)).collect();
            ExecutionPlan::from_ratios(&p.day.symbol, p.day.date, p.side, p.qty, &ratios)
        })
        .collect::<Result<Vec<_>>>()?;
    let stress = vi_stress(&data.days, &plans, &bt.fill)?;
    let summary = aggregate_stats(&stress.results)?;
    write_ledger(out.track("ledger.csv"), &stress.results)?;
    let text = format!("{summary}\n\nVolatility interruption split\n{stress}\n");
    print!("{text}");
    out.write("summary.txt", text)?;
    #[derive(Serialize)]
    struct Report<'a> {
        summary: &'a crate::execsim::Summary,
        vi_stress: &'a crate::execsim::ViStress,
    }
    out.write(
        "summary.json",
        json(&Report {
            summary: &summary,
            vi_stress: &stress,
        })?,
    )?;
    Ok(())
}

fn spike_cmd(cfg: &mut RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(cfg)?;
    let model = load_transformer(cfg)?;
    let mcfg = model.config().clone();
    let source = WindowSource::new(&data.days, &data.meta, mcfg.context, mcfg.horizon)?;
    let split = split_specs(cfg, &source)?;
    let mut specs = partition(&split, cfg.spike.partition);
    if cfg.spike.max_windows > 0 && specs.len() > cfg.spike.max_windows {
        specs = &specs[..cfg.spike.max_windows];
    }
    let bars = source.bars_per_day();
    let units = cfg.spike.ratio_units;
    // Windows are in (stock, time) order, so the series below are
    // consecutive minutes of each stock.
    let pairs = specs
        .par_iter()
        .map(|s| {
            let w = source.materialize(s);
            let d = model.forward(&w)?.steps[0];
            let y = w.target[0];
            let ratio = match units {
                RatioUnits::Log => y,
                RatioUnits::Raw => ratio_from_log(y, bars),
            };
            Ok((d.std_dev(), ratio))
        })
        .collect::<Result<Vec<_>>>()?;
    let (std, ratio): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let level = spike_level_regression(&std, &ratio)?;
    let diff = spike_diff_regression(&std, &ratio)?;
    let level_txt = format!("Volume ratio on predicted std\n{level}\n");
    let diff_txt = format!("Change in predicted std on rising volume ratio\n{diff}\n");
    print!("{level_txt}\n{diff_txt}");
    out.write("spike_level.txt", level_txt)?;
    out.write("spike_diff.txt", diff_txt)?;
    #[derive(Serialize)]
    struct Report<'a> {
        ratio_units: RatioUnits,
        level: &'a crate::analysis::OlsResult,
        diff: &'a crate::analysis::OlsResult,
    }
    out.write(
        "spike_analysis.json",
        json(&Report {
            ratio_units: units,
            level: &level,
            diff: &diff,
        })?,
    )?;
    Ok(())
}

fn perf_cmd(cfg: &mut RunConfig, out: &mut Outputs) -> Result<()> {
    let data = load_data(cfg)?;
    let ledger_path = match &cfg.perf.ledger {
        Some(p) => p.clone(),
        None => cfg.checkpoint_dir()?.join("ledger.csv"),
    };
    let rows = read_ledger(&ledger_path)?;
    let days: BTreeMap<(&str, NaiveDate), &TradingDay> = data
        .days
        .iter()
        .map(|d| ((d.symbol.as_str(), d.date), d))
        .collect();
    let mut feats = Vec::new();
    let mut perf = Vec::new();
    for r in rows {
        let Some(p) = r.perf_bp else { continue };
        let day = days.get(&(r.symbol.as_str(), r.date)).ok_or_else(|| {
            Error::Invalid(format!(
                "ledger row {} {} has no session in the data",
                r.symbol, r.date
            ))
        })?;
        let meta = data
            .meta
            .get(&r.symbol)
            .ok_or_else(|| Error::UnknownSymbol(r.symbol.clone()))?;
        feats.push(compute_market_features(day, meta)?);
        perf.push(p);
    }
    let result = performance_regression(&feats, &perf)?;
    let text = format!("Execution performance (bp) on z-scored market features\n{result}\n");
    print!("{text}");
    out.write("perf_regression.txt", text)?;
    out.write("perf_regression.json", json(&result)?)?;
    Ok(())
}
