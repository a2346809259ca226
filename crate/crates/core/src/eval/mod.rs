//! Displacement metrics and the sliding-window test harness.

mod report;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Graph;
use crate::data::{extract_batches, Batch, Point, SceneDataset};
use crate::model::{forward_window, linear_baseline, ForwardOptions, Mode, ModelError, ModelWeights, SceneUse};
use crate::scenegrid::{nonlinearity_phi_with, GridBank, PhiMode, Variant};

pub use report::{EvalReport, PredictionRow, SequenceMetrics};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory {index}: predicted {predicted} points but truth has {truth}")]
    LengthMismatch { index: usize, predicted: usize, truth: usize },
    #[error("metrics need at least one trajectory")]
    Empty,
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("sequence `{name}` has {samples} sampling instants, fewer than the window length {window}")]
    TooShort { name: String, samples: usize, window: usize },
    #[error("sequence `{0}` has no window with a fully observed target")]
    NoWindows(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("report line {line}: {reason}")]
    Report { line: usize, reason: String },
}

fn check_pairs(predicted: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<(), EvalError> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(if predicted.is_empty() {
            EvalError::Empty
        } else {
            EvalError::LengthMismatch {
                index: predicted.len().min(truth.len()),
                predicted: predicted.len(),
                truth: truth.len(),
            }
        });
    }
    for (index, (p, t)) in predicted.iter().zip(truth).enumerate() {
        if p.len() != t.len() || p.is_empty() {
            return Err(EvalError::LengthMismatch {
                index,
                predicted: p.len(),
                truth: t.len(),
            });
        }
    }
    Ok(())
}

/// Mean Euclidean displacement over every predicted point of every trajectory.
pub fn ade(predicted: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<f64, EvalError> {
    check_pairs(predicted, truth)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        total += p.iter().zip(t).map(|(a, b)| a.distance(*b)).sum::<f64>();
        count += p.len();
    }
    Ok(total / count as f64)
}

/// Mean Euclidean displacement at the final predicted point.
pub fn fde(predicted: &[Vec<Point>], truth: &[Vec<Point>]) -> Result<f64, EvalError> {
    check_pairs(predicted, truth)?;
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| p[p.len() - 1].distance(t[t.len() - 1]))
        .sum();
    Ok(total / predicted.len() as f64)
}

/// ADE restricted to trajectories whose complete true window (observed plus
/// future, given in `truth_full`) is non-linear. The forecast is compared to
/// the tail of each true window. `None` when no trajectory qualifies.
pub fn nde(predicted: &[Vec<Point>], truth_full: &[Vec<Point>], threshold: f64, mode: PhiMode) -> Result<Option<f64>, EvalError> {
    if !(threshold > 0.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let mut pred_sel = Vec::new();
    let mut truth_sel = Vec::new();
    for (index, (p, t)) in predicted.iter().zip(truth_full).enumerate() {
        if t.len() < p.len() {
            return Err(EvalError::LengthMismatch {
                index,
                predicted: p.len(),
                truth: t.len(),
            });
        }
        let phi = nonlinearity_phi_with(t, mode).unwrap_or(0.0);
        if phi > threshold {
            pred_sel.push(p.clone());
            truth_sel.push(t[t.len() - p.len()..].to_vec());
        }
    }
    if pred_sel.is_empty() {
        return Ok(None);
    }
    ade(&pred_sel, &truth_sel).map(Some)
}

/// A trained network plus everything needed to run it on a new sequence.
#[derive(Clone, Debug)]
pub struct ModelPredictor<'a> {
    pub weights: &'a ModelWeights,
    pub flags: Vec<bool>,
    pub variant: Variant,
    pub scene: SceneUse,
    pub sample: bool,
    pub peephole_ct: bool,
}

#[derive(Clone, Debug)]
pub enum Predictor<'a> {
    Model(ModelPredictor<'a>),
    /// Least-squares constant-velocity extrapolation.
    Linear,
    /// Returns the ground truth; used to sanity-check the harness.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub stride: usize,
    pub threshold: f64,
    pub phi_mode: PhiMode,
    pub reset_per_window: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_obs: 8,
            t_pred: 12,
            stride: 1,
            threshold: 0.2,
            phi_mode: PhiMode::YAxis,
            reset_per_window: false,
            seed: 0,
        }
    }
}

/// Metrics and forecasts for one sequence.
#[derive(Clone, Debug)]
pub struct SequenceEval {
    pub metrics: SequenceMetrics,
    pub predictions: Vec<PredictionRow>,
}

/// Slides a window over `ds` and forecasts every fully observed target.
/// Scene memory persists across windows unless `reset_per_window` is set.
pub fn sliding_eval(predictor: &Predictor<'_>, ds: &SceneDataset, cfg: &EvalConfig) -> Result<SequenceEval, EvalError> {
    let window = cfg.t_obs + cfg.t_pred;
    let samples = ds.num_samples();
    if samples < window {
        return Err(EvalError::TooShort {
            name: ds.name.clone(),
            samples,
            window,
        });
    }
    let batches = extract_batches(ds, cfg.t_obs, cfg.t_pred, cfg.stride);
    evaluate_batches(predictor, &ds.name, ds.header.frame_step, &batches, cfg)
}

/// Runs `predictor` over pre-extracted windows of one sequence, in order.
pub fn evaluate_batches(
    predictor: &Predictor<'_>,
    name: &str,
    frame_step: u64,
    batches: &[Batch],
    cfg: &EvalConfig,
) -> Result<SequenceEval, EvalError> {
    if batches.is_empty() {
        return Err(EvalError::NoWindows(name.to_string()));
    }
    let mut bank = match predictor {
        Predictor::Model(m) => {
            let mut bank = GridBank::new(m.weights.dims.grid, m.weights.dims.hidden, m.variant);
            bank.set_flags(&m.flags);
            Some(bank)
        }
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut predicted = Vec::new();
    let mut future = Vec::new();
    let mut full = Vec::new();
    let mut rows = Vec::new();
    for (w, batch) in batches.iter().enumerate() {
        let forecasts: Vec<Vec<Point>> = match predictor {
            Predictor::Oracle => batch.targets.iter().map(|t| t.positions[batch.t_obs..].to_vec()).collect(),
            Predictor::Linear => batch
                .targets
                .iter()
                .map(|t| linear_baseline(&t.positions[..batch.t_obs], batch.t_pred))
                .collect::<Result<_, _>>()?,
            Predictor::Model(m) => {
                let bank = bank.as_mut().expect("model predictor has a bank");
                if cfg.reset_per_window {
                    bank.reset_states();
                }
                let opts = ForwardOptions {
                    mode: if m.sample { Mode::PredictSample } else { Mode::PredictMean },
                    scene: m.scene,
                    dropout: 0.0,
                    peephole_ct: m.peephole_ct,
                };
                let mut g = Graph::new();
                let out = forward_window(&mut g, batch, bank, m.weights, &opts, &mut rng)?;
                out.forecasts.into_iter().map(|f| f.predicted).collect()
            }
        };
        for (target, pred) in batch.targets.iter().zip(forecasts) {
            for (j, p) in pred.iter().enumerate() {
                let truth = target.positions[batch.t_obs + j];
                rows.push(PredictionRow {
                    window: w,
                    frame: batch.start_frame + (batch.t_obs + j) as u64 * frame_step,
                    target: target.target_id,
                    pred: *p,
                    truth,
                });
            }
            predicted.push(pred);
            future.push(target.positions[batch.t_obs..].to_vec());
            full.push(target.positions.clone());
        }
    }
    let nonlinear: Vec<bool> = full
        .iter()
        .map(|t| nonlinearity_phi_with(t, cfg.phi_mode).unwrap_or(0.0) > cfg.threshold)
        .collect();
    let metrics = SequenceMetrics {
        name: name.to_string(),
        ade: ade(&predicted, &future)?,
        fde: fde(&predicted, &future)?,
        nde: nde(&predicted, &full, cfg.threshold, cfg.phi_mode)?,
        n_targets: predicted.len(),
        n_windows: batches.len(),
        n_nonlinear: nonlinear.iter().filter(|&&b| b).count(),
    };
    Ok(SequenceEval {
        metrics,
        predictions: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted(points: &[Point], d: Point) -> Vec<Point> {
        points.iter().map(|&p| p + d).collect()
    }

    fn line(n: usize) -> Vec<Point> {
        (0..n).map(|k| Point::new(0.01 * k as f64, -0.02 * k as f64)).collect()
    }

    #[test]
    fn ade_examples() {
        let truth = line(12);
        assert_eq!(ade(&[truth.clone()], &[truth.clone()]).unwrap(), 0.0);
        let off = shifted(&truth, Point::new(0.3, 0.4));
        assert!((ade(&[off.clone()], &[truth.clone()]).unwrap() - 0.5).abs() < 1e-12);
        let two = ade(&[truth.clone(), off], &[truth.clone(), truth]).unwrap();
        assert!((two - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ade_rejects_mismatch() {
        assert!(matches!(ade(&[line(3)], &[line(4)]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(ade(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn fde_reads_only_the_last_point() {
        let truth = line(12);
        let mut pred = shifted(&truth, Point::new(5.0, -3.0));
        *pred.last_mut().unwrap() = truth[11] + Point::new(0.3, 0.4);
        assert!((fde(&[pred], &[truth.clone()]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(fde(&[truth.clone()], &[truth]).unwrap(), 0.0);
    }

    #[test]
    fn nde_examples() {
        let straight = line(20);
        let pred = shifted(&straight[8..], Point::new(0.3, 0.4));
        assert_eq!(nde(&[pred.clone()], &[straight.clone()], 0.2, PhiMode::YAxis).unwrap(), None);

        let mut bent = straight.clone();
        bent[10].y += 1.0;
        let bent_pred = shifted(&bent[8..], Point::new(0.3, 0.4));
        let got = nde(&[pred, bent_pred], &[straight, bent], 0.2, PhiMode::YAxis).unwrap();
        assert!((got.unwrap() - 0.5).abs() < 1e-12);
        assert!(nde(&[], &[], 0.0, PhiMode::YAxis).is_err());
    }

    #[test]
    fn oracle_scores_zero_and_window_count() {
        let ds = crate::data::generate_synthetic(crate::data::SceneKind::Straight, 30, 0.0, 2).unwrap();
        let cfg = EvalConfig::default();
        let out = sliding_eval(&Predictor::Oracle, &ds, &cfg).unwrap();
        assert_eq!(out.metrics.ade, 0.0);
        assert_eq!(out.metrics.fde, 0.0);
        let lin = sliding_eval(&Predictor::Linear, &ds, &cfg).unwrap();
        assert!(lin.metrics.ade < 1e-9);
        assert_eq!(lin.predictions.len(), lin.metrics.n_targets * 12);
    }

    #[test]
    fn short_sequence_is_rejected() {
        let mut ds = SceneDataset::empty("tiny", Default::default());
        ds.trajectories.push(crate::data::Trajectory {
            target_id: 1,
            points: (0..5)
                .map(|k| crate::data::TrajectoryPoint {
                    frame: k * 10,
                    pos: Point::ZERO,
                })
                .collect(),
        });
        assert!(matches!(
            sliding_eval(&Predictor::Linear, &ds, &EvalConfig::default()),
            Err(EvalError::TooShort { .. })
        ));
    }
}
