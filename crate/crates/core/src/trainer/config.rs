use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_updates: usize,
    pub total_updates: usize,
    /// Degree of the polynomial decay after warmup.
    pub power: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 2e-3,
            warmup_updates: 225,
            total_updates: 300,
            power: 1.0,
        }
    }
}

impl LrSchedule {
    /// Learning rate of update `u` (1-based): linear warmup to `peak_lr` at
    /// `u == warmup_updates`, then polynomial decay to 0 at `total_updates`.
    pub fn lr(&self, u: usize) -> f64 {
        let (w, t) = (self.warmup_updates, self.total_updates);
        if u <= w {
            return self.peak_lr * (u as f64 / w as f64);
        }
        if u >= t {
            return 0.0;
        }
        self.peak_lr * (1.0 - (u - w) as f64 / (t - w) as f64).powf(self.power)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerChoice {
    #[default]
    Gumbel,
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus_dir: Option<PathBuf>,
    /// Synthetic noise is generated when absent.
    pub noise_dir: Option<PathBuf>,
    /// Synthetic impulse responses are generated when absent.
    pub rir_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_dir: None,
            noise_dir: None,
            rir_dir: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub optimizer: OptimizerConfig,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint every this many updates (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
    pub quantizer: QuantizerChoice,
    pub paths: Paths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            optimizer: OptimizerConfig::default(),
            lr_schedule: LrSchedule::default(),
            batch_size: 8,
            seed: 0,
            checkpoint_every: 100,
            quantizer: QuantizerChoice::Gumbel,
            paths: Paths::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        let s = &self.lr_schedule;
        if !(s.peak_lr > 0.0) || s.warmup_updates > s.total_updates || !(s.power > 0.0) {
            return Err(Error::InvalidConfig(
                "lr schedule needs peak_lr > 0, power > 0 and warmup_updates <= total_updates".into(),
            ));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("invalid optimizer settings".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}
