use std::fmt::Write as _;

use thiserror::Error;

use crate::eval::EvalConfig;
use crate::model::{ModelDims, ModelKind};
use crate::scenegrid::{GridConfig, PhiMode, Variant};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot parse `{value}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("config line {0}: expected key=value")]
    BadLine(usize),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Hyperparameters and protocol switches for both training stages.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub clip_norm: f64,
    pub hidden: usize,
    pub embed: usize,
    pub grid: usize,
    pub subgrid: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub nonlinear_threshold: f64,
    pub variant: Variant,
    pub seed: u64,
    pub model: ModelKind,
    /// Window stride for training batches; `None` means non-overlapping.
    pub train_stride: Option<usize>,
    /// Share of each video's windows held back for validation.
    pub val_fraction: f64,
    /// Leading share of the unseen video used for fine-tuning.
    pub fraction: f64,
    pub freeze_pedestrian: bool,
    pub peephole_ct: bool,
    pub phi_mode: PhiMode,
    pub reset_per_window: bool,
    /// Decode forecasts by sampling instead of taking the mean.
    pub sample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            dropout: 0.2,
            clip_norm: 10.0,
            hidden: 128,
            embed: 64,
            grid: 8,
            subgrid: 4,
            epochs_stage1: 100,
            epochs_stage2: 10,
            t_obs: 8,
            t_pred: 12,
            nonlinear_threshold: 0.2,
            variant: Variant::N,
            seed: 0,
            model: ModelKind::Scene,
            train_stride: None,
            val_fraction: 0.2,
            fraction: 0.5,
            freeze_pedestrian: false,
            peephole_ct: false,
            phi_mode: PhiMode::YAxis,
            reset_per_window: false,
            sample: false,
        }
    }
}

/// Every accepted key, in rendering order.
pub const CONFIG_KEYS: [&str; 23] = [
    "lr",
    "dropout",
    "clip_norm",
    "hidden",
    "embed",
    "grid",
    "subgrid",
    "epochs_stage1",
    "epochs_stage2",
    "t_obs",
    "t_pred",
    "nonlinear_threshold",
    "variant",
    "seed",
    "model",
    "train_stride",
    "val_fraction",
    "fraction",
    "freeze_pedestrian",
    "peephole_ct",
    "phi_mode",
    "reset_per_window",
    "sample",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl TrainConfig {
    pub fn window(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn stride(&self) -> usize {
        self.train_stride.unwrap_or(self.window())
    }

    pub fn dims(&self) -> Result<ModelDims, ConfigError> {
        let grid = GridConfig::new(self.grid, self.subgrid).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ModelDims {
            embed: self.embed,
            hidden: self.hidden,
            grid,
        })
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            t_obs: self.t_obs,
            t_pred: self.t_pred,
            stride: 1,
            threshold: self.nonlinear_threshold,
            phi_mode: self.phi_mode,
            reset_per_window: self.reset_per_window,
            seed: self.seed,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "lr" => self.lr = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "embed" => self.embed = parse(key, value)?,
            "grid" => self.grid = parse(key, value)?,
            "subgrid" => self.subgrid = parse(key, value)?,
            "epochs_stage1" => self.epochs_stage1 = parse(key, value)?,
            "epochs_stage2" => self.epochs_stage2 = parse(key, value)?,
            "t_obs" => self.t_obs = parse(key, value)?,
            "t_pred" => self.t_pred = parse(key, value)?,
            "nonlinear_threshold" => self.nonlinear_threshold = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "model" => self.model = parse(key, value)?,
            "train_stride" => {
                self.train_stride = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "fraction" => self.fraction = parse(key, value)?,
            "freeze_pedestrian" => self.freeze_pedestrian = parse(key, value)?,
            "peephole_ct" => self.peephole_ct = parse(key, value)?,
            "phi_mode" => self.phi_mode = parse(key, value)?,
            "reset_per_window" => self.reset_per_window = parse(key, value)?,
            "sample" => self.sample = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => self.lr.to_string(),
            "dropout" => self.dropout.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "hidden" => self.hidden.to_string(),
            "embed" => self.embed.to_string(),
            "grid" => self.grid.to_string(),
            "subgrid" => self.subgrid.to_string(),
            "epochs_stage1" => self.epochs_stage1.to_string(),
            "epochs_stage2" => self.epochs_stage2.to_string(),
            "t_obs" => self.t_obs.to_string(),
            "t_pred" => self.t_pred.to_string(),
            "nonlinear_threshold" => self.nonlinear_threshold.to_string(),
            "variant" => self.variant.to_string(),
            "seed" => self.seed.to_string(),
            "model" => self.model.to_string(),
            "train_stride" => self.train_stride.map_or("auto".to_string(), |s| s.to_string()),
            "val_fraction" => self.val_fraction.to_string(),
            "fraction" => self.fraction.to_string(),
            "freeze_pedestrian" => self.freeze_pedestrian.to_string(),
            "peephole_ct" => self.peephole_ct.to_string(),
            "phi_mode" => self.phi_mode.to_string(),
            "reset_per_window" => self.reset_per_window.to_string(),
            "sample" => self.sample.to_string(),
            _ => return None,
        })
    }

    /// `key=value` lines for every key.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(i + 1))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.hidden == 0 || self.embed == 0 || self.grid == 0 || self.subgrid == 0 {
            return bad("hidden, embed, grid and subgrid must be positive");
        }
        if self.t_obs < 2 || self.t_pred == 0 {
            return bad("t_obs must be at least 2 and t_pred positive");
        }
        if self.train_stride == Some(0) {
            return bad("train_stride must be positive");
        }
        if !(self.nonlinear_threshold > 0.0) {
            return bad("nonlinear_threshold must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)");
        }
        if !(0.0..=0.5).contains(&self.fraction) {
            return bad("fraction must be in [0, 0.5]");
        }
        Ok(())
    }
}
