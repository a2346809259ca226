//! Epoch loops, the two training stages, checkpoints and the training log.

mod checkpoint;
mod config;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{clip_global_norm, AdamConfig, AdamState, Graph};
use crate::data::{extract_batches, Batch, DataError, SceneDataset, Trajectory};
use crate::eval::{evaluate_batches, sliding_eval, EvalError, ModelPredictor, Predictor, SequenceMetrics};
use crate::model::{forward_window, ForwardOptions, ModelError, ModelWeights};
use crate::scenegrid::{mark_nonlinear_cells, GridBank};

pub use checkpoint::{Checkpoint, CheckpointError, MAGIC};
pub use config::{ConfigError, TrainConfig, CONFIG_KEYS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("video `{video}`, batch {batch} (start frame {start_frame}): {source}")]
    Batch {
        video: String,
        batch: usize,
        start_frame: u64,
        source: ModelError,
    },
    #[error("video `{video}`, batch {batch} (start frame {start_frame}): non-finite loss {loss}")]
    NonFinite {
        video: String,
        batch: usize,
        start_frame: u64,
        loss: f64,
    },
    #[error("no training windows in {0}")]
    NoBatches(String),
    #[error("stage 1 needs at least 2 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("held-out index {index} out of range for {count} datasets")]
    HeldOut { index: usize, count: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// The training windows of one video, in time order.
#[derive(Clone, Debug)]
pub struct Video {
    pub name: String,
    pub frame_step: u64,
    pub batches: Vec<Batch>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm actually applied.
    pub clipped_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub batches: usize,
    pub max_grad_norm: f64,
}

/// Weights, optimizer state and the dropout stream of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub weights: ModelWeights,
    pub adam: AdamState,
    pub flags: Vec<bool>,
    frozen: Option<Vec<bool>>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let dims = config.dims()?;
        let weights = ModelWeights::init(dims, config.seed);
        let flags = vec![false; dims.grid.num_cells()];
        Ok(Self::with_weights(config, weights, flags))
    }

    pub fn with_weights(config: TrainConfig, weights: ModelWeights, flags: Vec<bool>) -> Self {
        let adam = AdamState::new(
            &weights.store,
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
        );
        let frozen = config
            .freeze_pedestrian
            .then(|| weights.frozen_mask(&weights.pedestrian_param_ids()));
        // Dropout masks use their own stream so they never disturb init.
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d20f);
        Trainer {
            config,
            weights,
            adam,
            flags,
            frozen,
            rng,
        }
    }

    /// Fresh memories with hard filters from the current flags.
    pub fn bank(&self) -> GridBank {
        let dims = self.weights.dims;
        let mut bank = GridBank::new(dims.grid, dims.hidden, self.config.variant);
        bank.set_flags(&self.flags);
        bank
    }

    /// Forward, backward, clip, Adam on a single window.
    pub fn train_batch(&mut self, batch: &Batch, bank: &mut GridBank) -> Result<BatchStats, ModelError> {
        let opts = ForwardOptions {
            peephole_ct: self.config.peephole_ct,
            ..ForwardOptions::train(self.config.model.scene_use(), self.config.dropout)
        };
        let mut g = Graph::new();
        let out = forward_window(&mut g, batch, bank, &self.weights, &opts, &mut self.rng)?;
        let loss = out.loss.expect("training mode yields a loss");
        if !out.loss_value.is_finite() {
            return Ok(BatchStats {
                loss: out.loss_value,
                grad_norm: f64::NAN,
                clipped_norm: f64::NAN,
            });
        }
        let mut grads = g.backward(loss)?.param_grads(&g, &self.weights.store);
        let grad_norm = clip_global_norm(&mut grads, self.config.clip_norm);
        let clipped_norm = grads.global_norm();
        self.adam.step(&mut self.weights.store, &grads, self.frozen.as_deref());
        Ok(BatchStats {
            loss: out.loss_value,
            grad_norm,
            clipped_norm,
        })
    }

    /// One pass over every window. Scene memories start from zero for each
    /// video and persist across that video's windows.
    pub fn train_epoch(&mut self, videos: &[Video]) -> Result<EpochStats, TrainError> {
        let mut stats = EpochStats {
            loss: 0.0,
            batches: 0,
            max_grad_norm: 0.0,
        };
        for video in videos {
            let mut bank = self.bank();
            for (k, batch) in video.batches.iter().enumerate() {
                if self.config.reset_per_window {
                    bank.reset_states();
                }
                let b = self.train_batch(batch, &mut bank).map_err(|source| TrainError::Batch {
                    video: video.name.clone(),
                    batch: k,
                    start_frame: batch.start_frame,
                    source,
                })?;
                if !b.loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        video: video.name.clone(),
                        batch: k,
                        start_frame: batch.start_frame,
                        loss: b.loss,
                    });
                }
                stats.loss += b.loss;
                stats.batches += 1;
                stats.max_grad_norm = stats.max_grad_norm.max(b.grad_norm);
            }
        }
        if stats.batches == 0 {
            return Err(TrainError::NoBatches("the training split".into()));
        }
        Ok(stats)
    }

    pub fn predictor(&self) -> Predictor<'_> {
        Predictor::Model(ModelPredictor {
            weights: &self.weights,
            flags: self.flags.clone(),
            variant: self.config.variant,
            scene: self.config.model.scene_use(),
            sample: false,
            peephole_ct: self.config.peephole_ct,
        })
    }

    /// ADE pooled over every forecast (window, target) pair of `videos`.
    pub fn validation_ade(&self, videos: &[Video]) -> Result<f64, TrainError> {
        let cfg = self.config.eval_config();
        let predictor = self.predictor();
        let (mut total, mut count) = (0.0, 0usize);
        for v in videos.iter().filter(|v| !v.batches.is_empty()) {
            let out = evaluate_batches(&predictor, &v.name, v.frame_step, &v.batches, &cfg)?;
            total += out.metrics.ade * out.metrics.n_targets as f64;
            count += out.metrics.n_targets;
        }
        if count == 0 {
            return Err(TrainError::NoBatches("the validation split".into()));
        }
        Ok(total / count as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            weights: self.weights.clone(),
            flags: self.flags.clone(),
            adam: Some(self.adam.clone()),
        }
    }
}

/// One `epoch,split,loss,ade` line; empty cells are written blank.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub loss: Option<f64>,
    pub ade: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn push(&mut self, epoch: usize, split: &str, loss: Option<f64>, ade: Option<f64>) {
        self.rows.push(LogRow {
            epoch,
            split: split.to_string(),
            loss,
            ade,
        });
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,split,loss,ade\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.split, cell(r.loss), cell(r.ade));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, String> {
        let mut log = TrainLog::default();
        let opt = |s: &str| -> Result<Option<f64>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| format!("bad number `{s}`"))
            }
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(format!("line {}: expected 4 fields", i + 1));
            }
            let epoch = f[0].parse().map_err(|_| format!("line {}: bad epoch", i + 1))?;
            log.push(epoch, f[1], opt(f[2])?, opt(f[3])?);
        }
        Ok(log)
    }

    /// Epoch with the lowest validation ADE (first one on ties).
    pub fn best_val_epoch(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in self.rows.iter().filter(|r| r.split == "val") {
            if let Some(a) = r.ade {
                if best.is_none_or(|(_, b)| a < b) {
                    best = Some((r.epoch, a));
                }
            }
        }
        best.map(|(e, _)| e)
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Epoch whose weights were kept; 0 when no training happened.
    pub best_epoch: usize,
}

/// Windows of one dataset split by index order into training and
/// validation parts, plus the trajectories covered by the training part.
fn split_dataset(ds: &SceneDataset, config: &TrainConfig) -> (Video, Video, Vec<Trajectory>) {
    let mut batches = extract_batches(ds, config.t_obs, config.t_pred, config.stride());
    let n = batches.len();
    let n_val = ((n as f64) * config.val_fraction).round() as usize;
    let n_val = if n >= 2 { n_val.clamp(1, n - 1) } else { 0 };
    let val = batches.split_off(n - n_val);
    let covered = match (batches.first(), batches.last()) {
        (Some(first), Some(last)) => {
            let end = last.start_frame + (config.window() as u64 - 1) * ds.header.frame_step;
            ds.restrict_frames(first.start_frame, end).trajectories
        }
        _ => Vec::new(),
    };
    let video = |batches| Video {
        name: ds.name.clone(),
        frame_step: ds.header.frame_step,
        batches,
    };
    (video(batches), video(val), covered)
}

/// Pre-training on several videos with validation-ADE checkpoint selection.
pub fn fit_stage1(datasets: &[SceneDataset], config: &TrainConfig) -> Result<StageOutcome, TrainError> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut covered = Vec::new();
    for ds in datasets {
        let (t, v, c) = split_dataset(ds, config);
        train.push(t);
        val.push(v);
        covered.extend(c);
    }
    let grid = trainer.weights.dims.grid;
    trainer.flags = mark_nonlinear_cells(&covered, config.nonlinear_threshold, &grid, config.phi_mode).cell_flags(&grid);

    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    for epoch in 1..=config.epochs_stage1 {
        let stats = trainer.train_epoch(&train)?;
        let ade = trainer.validation_ade(&val)?;
        log.push(epoch, "train", Some(stats.loss), None);
        log.push(epoch, "val", None, Some(ade));
        log::info!("epoch {epoch}: train loss {:.4}, val ADE {ade:.5}", stats.loss);
        if best.as_ref().is_none_or(|(_, b, _)| ade < *b) {
            best = Some((epoch, ade, trainer.checkpoint()));
        }
    }
    let (best_epoch, _, checkpoint) = match best {
        Some(b) => b,
        None => (0, f64::NAN, trainer.checkpoint()),
    };
    Ok(StageOutcome {
        checkpoint,
        log,
        best_epoch,
    })
}

/// Leave-one-out pre-training: every dataset except `held_out` is used.
pub fn train_stage1(datasets: &[SceneDataset], held_out: usize, config: &TrainConfig) -> Result<StageOutcome, TrainError> {
    if datasets.len() < 2 {
        return Err(TrainError::TooFewDatasets(datasets.len()));
    }
    if held_out >= datasets.len() {
        return Err(TrainError::HeldOut {
            index: held_out,
            count: datasets.len(),
        });
    }
    let others: Vec<SceneDataset> = datasets
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != held_out)
        .map(|(_, d)| d.clone())
        .collect();
    fit_stage1(&others, config)
}

/// Fine-tunes on the leading `config.fraction` of an unseen video and keeps
/// the epoch with the lowest training loss. Network sizes always come from
/// the checkpoint. With fraction 0 the checkpoint is returned unchanged.
pub fn train_stage2(checkpoint: &Checkpoint, ds: &SceneDataset, config: &TrainConfig) -> Result<StageOutcome, TrainError> {
    config.validate()?;
    if config.fraction == 0.0 {
        return Ok(StageOutcome {
            checkpoint: checkpoint.clone(),
            log: TrainLog::default(),
            best_epoch: 0,
        });
    }
    let mut cfg = config.clone();
    cfg.hidden = checkpoint.config.hidden;
    cfg.embed = checkpoint.config.embed;
    cfg.grid = checkpoint.config.grid;
    cfg.subgrid = checkpoint.config.subgrid;
    cfg.model = checkpoint.config.model;

    let split = ds.leading_fraction(cfg.fraction);
    let batches = extract_batches(&split, cfg.t_obs, cfg.t_pred, cfg.stride());
    if batches.is_empty() {
        return Err(TrainError::NoBatches(format!("the leading {} of `{}`", cfg.fraction, ds.name)));
    }
    let grid = checkpoint.weights.dims.grid;
    let flags = mark_nonlinear_cells(&split.trajectories, cfg.nonlinear_threshold, &grid, cfg.phi_mode).cell_flags(&grid);
    let mut trainer = Trainer::with_weights(cfg.clone(), checkpoint.weights.clone(), flags);
    let videos = [Video {
        name: ds.name.clone(),
        frame_step: ds.header.frame_step,
        batches,
    }];
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    for epoch in 1..=cfg.epochs_stage2 {
        let stats = trainer.train_epoch(&videos)?;
        log.push(epoch, "train", Some(stats.loss), None);
        log::info!("fine-tune epoch {epoch}: train loss {:.4}", stats.loss);
        if best.as_ref().is_none_or(|(_, l, _)| stats.loss < *l) {
            best = Some((epoch, stats.loss, trainer.checkpoint()));
        }
    }
    let (best_epoch, _, checkpoint) = best.unwrap_or_else(|| (0, f64::NAN, trainer.checkpoint()));
    Ok(StageOutcome {
        checkpoint,
        log,
        best_epoch,
    })
}

/// One point of the fine-tuning data sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub fraction: f64,
    pub metrics: SequenceMetrics,
}

/// Fine-tunes `checkpoint` on each leading fraction of `ds` and evaluates
/// every result on the trailing half of the same video.
pub fn sweep_stage2(
    checkpoint: &Checkpoint,
    ds: &SceneDataset,
    config: &TrainConfig,
    fractions: &[f64],
) -> Result<Vec<SweepPoint>, TrainError> {
    let test = ds.trailing_fraction(0.5);
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let cfg = TrainConfig {
            fraction,
            ..config.clone()
        };
        let tuned = train_stage2(checkpoint, ds, &cfg)?.checkpoint;
        let pred = tuned.predictor(config.sample);
        let mut eval_cfg = tuned.config.eval_config();
        eval_cfg.reset_per_window = config.reset_per_window;
        let out = sliding_eval(&pred, &test, &eval_cfg)?;
        log::info!("fraction {fraction}: ADE {:.5}", out.metrics.ade);
        points.push(SweepPoint {
            fraction,
            metrics: out.metrics,
        });
    }
    Ok(points)
}
