//! Desk-scale synthetic experiments shared by the CLI and the test suites.

use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::data::{extract_batches, generate_synthetic, Batch, SceneKind, Trajectory, TrajectoryPoint};
use crate::eval::{evaluate_batches, sliding_eval, Predictor, SequenceMetrics};
use crate::model::{forward_window, ForwardOptions, ModelKind};
use crate::scenegrid::{mark_nonlinear_cells, Variant};
use crate::train::{fit_stage1, sweep_stage2, BatchStats, SweepPoint, TrainConfig, TrainError, Trainer};

/// Trajectories per synthetic video.
pub const DESK_TRAJECTORIES: usize = 500;
pub const DESK_NOISE: f64 = 0.01;

/// Small-network settings used by every desk experiment.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: 32,
        epochs_stage1: 30,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct OverfitOutcome {
    /// Per-step statistics; `loss` is measured before each update.
    pub steps: Vec<BatchStats>,
    pub initial_loss: f64,
    /// Dropout-free training loss after the last update.
    pub final_loss: f64,
    /// Mean-decoded ADE on the same window.
    pub ade: f64,
}

/// The most crowded window of a short noise-free straight-line scene.
pub fn overfit_batch(seed: u64) -> Result<Batch, TrainError> {
    let ds = generate_synthetic(SceneKind::Straight, 40, 0.0, seed)?;
    extract_batches(&ds, 8, 12, 20)
        .into_iter()
        .max_by_key(|b| b.targets.len())
        .ok_or_else(|| TrainError::NoBatches("the overfit scene".into()))
}

/// Repeated updates on a single window, each from fresh scene memories.
pub fn overfit_window(batch: &Batch, config: &TrainConfig, steps: usize) -> Result<OverfitOutcome, TrainError> {
    let mut trainer = Trainer::new(config.clone())?;
    let trajectories: Vec<Trajectory> = batch
        .targets
        .iter()
        .map(|t| Trajectory {
            target_id: t.target_id,
            points: (0u64..)
                .zip(&t.positions)
                .map(|(frame, &pos)| TrajectoryPoint { frame, pos })
                .collect(),
        })
        .collect();
    let grid = trainer.weights.dims.grid;
    trainer.flags = mark_nonlinear_cells(&trajectories, config.nonlinear_threshold, &grid, config.phi_mode).cell_flags(&grid);

    let wrap = |source| TrainError::Batch {
        video: "overfit".into(),
        batch: 0,
        start_frame: batch.start_frame,
        source,
    };
    let mut stats = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut bank = trainer.bank();
        stats.push(trainer.train_batch(batch, &mut bank).map_err(wrap)?);
    }
    let opts = ForwardOptions {
        peephole_ct: config.peephole_ct,
        ..ForwardOptions::train(config.model.scene_use(), 0.0)
    };
    let mut g = Graph::new();
    let mut bank = trainer.bank();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let final_loss = forward_window(&mut g, batch, &mut bank, &trainer.weights, &opts, &mut rng)
        .map_err(wrap)?
        .loss_value;
    let ade = evaluate_batches(&trainer.predictor(), "overfit", 1, std::slice::from_ref(batch), &config.eval_config())?
        .metrics
        .ade;
    Ok(OverfitOutcome {
        initial_loss: stats.first().map_or(f64::NAN, |s| s.loss),
        steps: stats,
        final_loss,
        ade,
    })
}

/// Test-half metrics of the turning-scene comparison for one seed.
#[derive(Clone, Debug)]
pub struct SceneMemoryRun {
    pub seed: u64,
    pub scene_n: SequenceMetrics,
    pub scene_a: SequenceMetrics,
    pub vanilla: SequenceMetrics,
    pub linear: SequenceMetrics,
}

impl SceneMemoryRun {
    /// Relative ADE reduction of the scene model (variant n) over vanilla.
    pub fn scene_gain(&self) -> f64 {
        1.0 - self.scene_n.ade / self.vanilla.ade
    }
}

/// Trains Scene-LSTM-n, Scene-LSTM-a and a vanilla LSTM on the first half of
/// a turning scene and evaluates all three (plus the linear baseline) on the
/// second half. The three models train on separate threads.
pub fn scene_memory_run(seed: u64) -> Result<SceneMemoryRun, TrainError> {
    let ds = generate_synthetic(SceneKind::AlleyTurn, DESK_TRAJECTORIES, DESK_NOISE, seed)?;
    let train = ds.leading_fraction(0.5);
    let test = ds.trailing_fraction(0.5);
    let base = desk_config(seed);
    let configs = [
        (ModelKind::Scene, Variant::N),
        (ModelKind::Scene, Variant::A),
        (ModelKind::Vanilla, Variant::N),
    ]
    .map(|(model, variant)| TrainConfig {
        model,
        variant,
        ..base.clone()
    });
    let results: Vec<Result<SequenceMetrics, TrainError>> = thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                let (train, test) = (&train, &test);
                s.spawn(move || -> Result<SequenceMetrics, TrainError> {
                    let ck = fit_stage1(std::slice::from_ref(train), cfg)?.checkpoint;
                    Ok(sliding_eval(&ck.predictor(false), test, &cfg.eval_config())?.metrics)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut it = results.into_iter();
    let mut next = || it.next().expect("three runs");
    let (scene_n, scene_a, vanilla) = (next()?, next()?, next()?);
    let linear = sliding_eval(&Predictor::Linear, &test, &base.eval_config())?.metrics;
    Ok(SceneMemoryRun {
        seed,
        scene_n,
        scene_a,
        vanilla,
        linear,
    })
}

pub const SWEEP_FRACTIONS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Pre-trains on straight and stopping scenes, then fine-tunes on growing
/// leading shares of an unseen turning scene.
pub fn stage2_sweep_run(seed: u64) -> Result<Vec<SweepPoint>, TrainError> {
    let gen = |kind, s| generate_synthetic(kind, DESK_TRAJECTORIES, DESK_NOISE, s);
    let straight = gen(SceneKind::Straight, seed)?;
    let stop = gen(SceneKind::StopRegion, seed.wrapping_add(1))?;
    let unseen = gen(SceneKind::AlleyTurn, seed.wrapping_add(2))?;
    let cfg = desk_config(seed);
    let pre = fit_stage1(&[straight, stop], &cfg)?.checkpoint;
    sweep_stage2(&pre, &unseen, &cfg, &SWEEP_FRACTIONS)
}
