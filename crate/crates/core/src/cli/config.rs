use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::execsim::FillModelConfig;
use crate::marketdata::{SyntheticConfig, DEFAULT_BARS_PER_DAY};
use crate::model::{BaselineKind, ModelConfig};
use crate::training::OptimConfig;
use crate::{Error, Result};

/// Everything a run needs, read from one TOML file. Command-line flags
/// override the matching keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Directory holding model checkpoints; defaults to `out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<PathBuf>,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub baseline: BaselineSection,
    pub optim: OptimConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub backtest: BacktestSection,
    pub spike: SpikeSection,
    pub perf: PerfSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            checkpoints: None,
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            baseline: BaselineSection::default(),
            optim: OptimConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            backtest: BacktestSection::default(),
            spike: SpikeSection::default(),
            perf: PerfSection::default(),
        }
    }
}

/// Bar and metadata files. When both are absent the run generates the
/// `[synthetic]` universe in memory instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bars: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    pub bars_per_day: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            bars: None,
            meta: None,
            bars_per_day: DEFAULT_BARS_PER_DAY,
        }
    }
}

/// Chronological split. Explicit dates win; otherwise the fractions of the
/// distinct trading dates decide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_end: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_end: Option<NaiveDate>,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_end: None,
            val_end: None,
            train_frac: 0.7,
            val_frac: 0.15,
        }
    }
}

impl SplitConfig {
    /// Fills in missing end dates from the sorted distinct `dates`.
    pub fn resolve(&mut self, dates: &[NaiveDate]) -> Result<()> {
        if self.train_end.is_some() && self.val_end.is_some() {
            return Ok(());
        }
        let n = dates.len();
        if n < 3 {
            return Err(Error::Insufficient(format!(
                "need at least 3 trading dates to split, found {n}"
            )));
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac < 1.0)
        {
            return Err(Error::Config(
                "split: fractions must be positive and sum below 1".into(),
            ));
        }
        let idx = |f: f64| ((f * n as f64).ceil() as usize).clamp(1, n) - 1;
        let t = idx(self.train_frac).min(n - 3);
        let v = idx(self.train_frac + self.val_frac).clamp(t + 1, n - 2);
        self.train_end.get_or_insert(dates[t]);
        self.val_end.get_or_insert(dates[v]);
        Ok(())
    }

    pub fn ends(&self) -> Result<(NaiveDate, NaiveDate)> {
        match (self.train_end, self.val_end) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Config("split dates unresolved".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub hidden: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { hidden: 32 }
    }
}

/// A model trained or evaluated by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelName {
    #[serde(rename = "RNN-HR")]
    RnnHr,
    #[serde(rename = "LSTM-HR")]
    LstmHr,
    #[serde(rename = "BiLSTM-HR")]
    BiLstmHr,
    #[serde(rename = "IVE")]
    Ive,
}

impl ModelName {
    /// Table order: baselines first, then the transformer.
    pub const ALL: [ModelName; 4] = [
        ModelName::RnnHr,
        ModelName::LstmHr,
        ModelName::BiLstmHr,
        ModelName::Ive,
    ];

    pub fn label(self) -> &'static str {
        match self.baseline() {
            Some(k) => k.label(),
            None => "IVE",
        }
    }

    pub fn slug(self) -> &'static str {
        match self.baseline() {
            Some(k) => k.slug(),
            None => "ive",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelName::RnnHr => Some(BaselineKind::RnnHr),
            ModelName::LstmHr => Some(BaselineKind::LstmHr),
            ModelName::BiLstmHr => Some(BaselineKind::BiLstmHr),
            ModelName::Ive => None,
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("checkpoint_{}.json", self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub models: Vec<ModelName>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            models: ModelName::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub models: Vec<ModelName>,
    pub partition: Partition,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            models: ModelName::ALL.to_vec(),
            partition: Partition::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    pub partition: Partition,
    /// Stocks drawn per trading date.
    pub stocks_per_day: usize,
    /// Order size as a fraction of the stock's previous-day volume.
    pub target_participation: f64,
    /// Lift gated forecasts by `adjust_c` predicted scales.
    pub adjust: bool,
    pub adjust_c: f64,
    pub history_window: usize,
    pub fill: FillModelConfig,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            partition: Partition::Test,
            stocks_per_day: 5,
            target_participation: 0.05,
            adjust: false,
            adjust_c: 0.2,
            history_window: 0,
            fill: FillModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioUnits {
    /// Log-ratio target units.
    #[default]
    Log,
    /// Share of the day's volume.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSection {
    pub partition: Partition,
    pub ratio_units: RatioUnits,
    /// First windows of the partition to use; 0 uses all.
    pub max_windows: usize,
}

impl Default for SpikeSection {
    fn default() -> Self {
        Self {
            partition: Partition::Test,
            ratio_units: RatioUnits::Log,
            max_windows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerfSection {
    /// Backtest ledger to attribute; defaults to `ledger.csv` in the
    /// checkpoint directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ledger: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.model.validate()?;
        self.optim.validate()?;
        self.backtest.fill.validate()?;
        if self.baseline.hidden == 0 {
            return Err(Error::Config("baseline: hidden must be positive".into()));
        }
        if self.data.bars.is_some() != self.data.meta.is_some() {
            return Err(Error::Config(
                "data: set both `bars` and `meta`, or neither".into(),
            ));
        }
        if !(self.backtest.target_participation > 0.0) || self.backtest.stocks_per_day == 0 {
            return Err(Error::Config(
                "backtest: target_participation and stocks_per_day must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> Result<&Path> {
        self.checkpoints
            .as_deref()
            .or(self.out.as_deref())
            .ok_or_else(|| {
                Error::Config("no checkpoint directory: set `checkpoints` or pass --out".into())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[optim]\nlearning_rate = 1.0").is_err());
        let c = RunConfig::from_toml("seed = 4\n[optim]\nlr = 0.01\n[train]\nmodels = [\"IVE\"]")
            .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.optim.lr, 0.01);
        assert_eq!(c.train.models, vec![ModelName::Ive]);
    }

    #[test]
    fn split_from_fractions() {
        let dates: Vec<NaiveDate> = (1..=20)
            .map(|d| NaiveDate::from_ymd_opt(2023, 3, d).unwrap())
            .collect();
        let mut s = SplitConfig::default();
        s.resolve(&dates).unwrap();
        let (a, b) = s.ends().unwrap();
        assert_eq!(a, dates[13]);
        assert_eq!(b, dates[16]);
        let mut tiny = SplitConfig::default();
        assert!(tiny.resolve(&dates[..2]).is_err());
        tiny.resolve(&dates[..3]).unwrap();
        assert!(tiny.ends().unwrap().0 < tiny.ends().unwrap().1);
    }
}
