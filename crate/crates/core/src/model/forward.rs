use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{Batch, Point};
use crate::scenegrid::{one_hot, GridBank};

use super::cells::{embed, nll_loss, pedestrian_step, scene_data_filter, scene_step, PedestrianState, PedestrianVars};
use super::{advance_position, sample_offset, GaussianParams, LstmVars, ModelError, ModelWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Teacher forcing with the summed NLL as loss.
    Train,
    /// Forecast by feeding back the predicted mean offset.
    PredictMean,
    /// Forecast by feeding back a sampled offset.
    PredictSample,
}

/// How much of the scene machinery participates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SceneUse {
    /// Scene LSTMs run and the filtered vector enters the head.
    #[default]
    Full,
    /// Scene LSTMs run but the head never sees their output.
    FilterOff,
    /// Scene LSTMs are skipped entirely (vanilla LSTM).
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub scene: SceneUse,
    pub dropout: f64,
    pub peephole_ct: bool,
}

impl ForwardOptions {
    pub fn predict(scene: SceneUse) -> Self {
        ForwardOptions {
            mode: Mode::PredictMean,
            scene,
            dropout: 0.0,
            peephole_ct: false,
        }
    }

    pub fn train(scene: SceneUse, dropout: f64) -> Self {
        ForwardOptions {
            mode: Mode::Train,
            scene,
            dropout,
            peephole_ct: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetForecast {
    pub target_id: u64,
    /// Forecast positions for the last `t_pred` instants (empty in training).
    pub predicted: Vec<Point>,
    /// The distribution emitted at each step, one per transition.
    pub step_params: Vec<GaussianParams>,
}

#[derive(Debug)]
pub struct WindowOutput {
    /// Scalar loss node; only present in training mode.
    pub loss: Option<Var>,
    pub loss_value: f64,
    pub forecasts: Vec<TargetForecast>,
}

/// Runs one window through the network. Targets are processed in ascending
/// id order at every instant; the grid bank is updated in place. In the
/// prediction modes only the scene updates made while observing are kept,
/// so forecasts never leak into later windows.
pub fn forward_window<R: Rng + ?Sized>(
    g: &mut Graph,
    batch: &Batch,
    bank: &mut GridBank,
    weights: &ModelWeights,
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<WindowOutput, ModelError> {
    if batch.targets.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if batch.t_obs == 0 || batch.len() < 2 {
        return Err(ModelError::WindowTooShort {
            t_obs: batch.t_obs,
            len: batch.len(),
        });
    }
    let dims = weights.dims;
    let hidden = dims.hidden;
    let use_scene = opts.scene != SceneUse::Off;
    if use_scene && bank.hidden != hidden {
        return Err(ModelError::BankMismatch {
            bank: bank.hidden,
            model: hidden,
        });
    }
    let training = opts.mode == Mode::Train;
    let steps = batch.len();
    let t_obs = batch.t_obs;

    let store = &weights.store;
    let net = PedestrianVars {
        embed: g.param(weights.embed, store),
        lstm: weights.pedestrian.bind(g, store),
        head_w: g.param(weights.head_w, store),
        head_b: g.param(weights.head_b, store),
    };
    let (filter_w, filter_b) = if opts.scene == SceneUse::Full {
        (Some(g.param(weights.filter_w, store)), Some(g.param(weights.filter_b, store)))
    } else {
        (None, None)
    };

    let zeros = g.constant(Tensor::zeros(&[hidden]));
    let mut states: Vec<PedestrianState> = vec![PedestrianState { h: zeros, c: zeros }; batch.targets.len()];
    let mut pos: Vec<Point> = batch.targets.iter().map(|t| t.positions[0]).collect();
    let mut off: Vec<Point> = batch.targets.iter().map(|t| t.offsets[0]).collect();
    let mut forecasts: Vec<TargetForecast> = batch
        .targets
        .iter()
        .map(|t| TargetForecast {
            target_id: t.target_id,
            predicted: Vec::new(),
            step_params: Vec::with_capacity(steps - 1),
        })
        .collect();

    let mut cell_vars: HashMap<usize, (Var, Var)> = HashMap::new();
    let mut cell_lstm: HashMap<usize, LstmVars> = HashMap::new();
    let mut controls: HashMap<usize, Var> = HashMap::new();
    let mut observed_snapshot: Option<HashMap<usize, (Var, Var)>> = None;
    let mut loss_terms: Vec<Var> = Vec::new();

    for t in 0..steps - 1 {
        for (k, target) in batch.targets.iter().enumerate() {
            let e = embed(g, net.embed, off[k])?;
            let h_prev = states[k].h;

            let filtered = if use_scene {
                let (cell, sub) = dims.grid.locate(pos[k]);
                bank.cell(cell)?;
                let v = one_hot(sub, dims.grid.num_subcells())?;
                let prior = match cell_vars.get(&cell) {
                    Some(&s) => s,
                    None => {
                        let state = &bank.cells[cell];
                        (g.constant_vec(&state.h), g.constant_vec(&state.c))
                    }
                };
                let lstm = *cell_lstm
                    .entry(cell)
                    .or_insert_with(|| weights.scene[cell].bind(g, store));
                let (h_g, c_g) = scene_step(g, &lstm, prior, &v, h_prev, opts.peephole_ct)?;
                cell_vars.insert(cell, (h_g, c_g));
                match (filter_w, filter_b) {
                    (Some(w_s), Some(b_s)) => {
                        let control = *controls
                            .entry(cell)
                            .or_insert_with(|| g.constant_vec(&bank.cells[cell].control));
                        Some(scene_data_filter(g, h_g, control, e, h_prev, w_s, b_s)?)
                    }
                    _ => None,
                }
            } else {
                None
            };

            let mask = if training && opts.dropout > 0.0 {
                let keep = 1.0 / (1.0 - opts.dropout);
                let values: Vec<f64> = (0..hidden)
                    .map(|_| if rng.random::<f64>() < opts.dropout { 0.0 } else { keep })
                    .collect();
                Some(g.constant_vec(&values))
            } else {
                None
            };

            let (next, raw) = pedestrian_step(g, &net, states[k], e, filtered, mask, opts.peephole_ct)?;
            states[k] = next;
            let params = GaussianParams::from_raw(g.value(raw).data());
            forecasts[k].step_params.push(params);

            if training {
                loss_terms.push(nll_loss(g, raw, target.offsets[t + 1])?);
            }
            if !training && t + 1 >= t_obs {
                let step = match opts.mode {
                    Mode::PredictSample => sample_offset(&params, rng),
                    _ => params.mean(),
                };
                pos[k] = advance_position(pos[k], step);
                off[k] = step;
                forecasts[k].predicted.push(pos[k]);
            } else {
                pos[k] = target.positions[t + 1];
                off[k] = target.offsets[t + 1];
            }
        }
        if !training && t + 1 == t_obs {
            observed_snapshot = Some(cell_vars.clone());
        }
    }

    let persisted = if training || t_obs >= steps {
        cell_vars
    } else {
        observed_snapshot.unwrap_or_default()
    };
    for (cell, (h, c)) in persisted {
        let state = &mut bank.cells[cell];
        state.h.copy_from_slice(g.value(h).data());
        state.c.copy_from_slice(g.value(c).data());
    }

    let loss = if training {
        let mut acc = loss_terms[0];
        for &term in &loss_terms[1..] {
            acc = g.add(acc, term)?;
        }
        Some(acc)
    } else {
        None
    };
    let loss_value = loss.map(|l| g.value(l).item()).unwrap_or(0.0);
    Ok(WindowOutput {
        loss,
        loss_value,
        forecasts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::scenegrid::{GridConfig, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            embed: 4,
            hidden: 6,
            grid: GridConfig::new(2, 4).unwrap(),
        }
    }

    fn batch(n_targets: usize) -> Batch {
        let tracks = (0..n_targets)
            .map(|k| {
                let pts = (0..6)
                    .map(|t| Point::new(-0.6 + 0.2 * t as f64 + 0.05 * k as f64, 0.3 - 0.1 * (t * t) as f64 * 0.1))
                    .collect();
                (10 + k as u64, pts)
            })
            .collect();
        Batch::from_tracks(0, 3, 3, tracks)
    }

    fn run(batch: &Batch, bank: &mut GridBank, w: &ModelWeights, opts: ForwardOptions) -> (Graph, WindowOutput) {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward_window(&mut g, batch, bank, w, &opts, &mut rng).unwrap();
        (g, out)
    }

    #[test]
    fn training_loss_is_sum_of_step_nlls() {
        let w = ModelWeights::init(dims(), 3);
        let b = batch(1);
        let mut bank = GridBank::new(dims().grid, 6, Variant::A);
        let (_, out) = run(&b, &mut bank, &w, ForwardOptions::train(SceneUse::Full, 0.0));
        let f = &out.forecasts[0];
        assert_eq!(f.step_params.len(), 5);
        let oracle: f64 = f
            .step_params
            .iter()
            .enumerate()
            .map(|(t, p)| p.nll(b.targets[0].offsets[t + 1]))
            .sum();
        assert!((out.loss_value - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
        assert!(f.predicted.is_empty());
    }

    #[test]
    fn zero_control_matches_filter_off_bitwise() {
        let w = ModelWeights::init(dims(), 4);
        let b = batch(3);
        let mut bank_n = GridBank::new(dims().grid, 6, Variant::N);
        let mut bank_off = bank_n.clone();
        let (_, a) = run(&b, &mut bank_n, &w, ForwardOptions::predict(SceneUse::Full));
        let (_, c) = run(&b, &mut bank_off, &w, ForwardOptions::predict(SceneUse::FilterOff));
        assert_eq!(a.forecasts, c.forecasts);
    }

    #[test]
    fn filter_off_equals_vanilla() {
        let w = ModelWeights::init(dims(), 5);
        let b = batch(2);
        let mut bank = GridBank::new(dims().grid, 6, Variant::A);
        let (_, off) = run(&b, &mut bank, &w, ForwardOptions::predict(SceneUse::FilterOff));
        let (_, vanilla) = run(&b, &mut bank, &w, ForwardOptions::predict(SceneUse::Off));
        assert_eq!(off.forecasts, vanilla.forecasts);
    }

    #[test]
    fn predict_mean_is_deterministic_and_telescopes() {
        let w = ModelWeights::init(dims(), 6);
        let b = batch(2);
        let mut bank1 = GridBank::new(dims().grid, 6, Variant::A);
        let mut bank2 = bank1.clone();
        let (_, x) = run(&b, &mut bank1, &w, ForwardOptions::predict(SceneUse::Full));
        let (_, y) = run(&b, &mut bank2, &w, ForwardOptions::predict(SceneUse::Full));
        assert_eq!(x.forecasts, y.forecasts);
        assert_eq!(bank1, bank2);
        for (f, t) in x.forecasts.iter().zip(&b.targets) {
            assert_eq!(f.predicted.len(), 3);
            // Each forecast step adds the emitted mean to the previous position.
            let mut p = t.positions[2];
            for (j, q) in f.predicted.iter().enumerate() {
                p = advance_position(p, f.step_params[2 + j].mean());
                assert_eq!(p, *q);
            }
        }
    }

    #[test]
    fn sampled_forecasts_follow_the_seed() {
        let w = ModelWeights::init(dims(), 6);
        let b = batch(1);
        let mut opts = ForwardOptions::predict(SceneUse::Full);
        opts.mode = Mode::PredictSample;
        let go = |seed| {
            let mut bank = GridBank::new(dims().grid, 6, Variant::A);
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            forward_window(&mut g, &b, &mut bank, &w, &opts, &mut rng).unwrap().forecasts
        };
        assert_eq!(go(1), go(1));
        assert_ne!(go(1), go(2));
    }

    #[test]
    fn gradients_reach_only_visited_cells() {
        let w = ModelWeights::init(dims(), 7);
        // Stays in the top-left cell (row 0, col 0 covers y < 0... pick by locate).
        let pts: Vec<Point> = (0..6).map(|t| Point::new(-0.8 + 0.02 * t as f64, -0.8)).collect();
        let b = Batch::from_tracks(0, 3, 3, vec![(1, pts.clone())]);
        let visited = dims().grid.locate(pts[0]).0;
        let mut bank = GridBank::new(dims().grid, 6, Variant::A);
        let (g, out) = run(&b, &mut bank, &w, ForwardOptions::train(SceneUse::Full, 0.0));
        let grads = g.backward(out.loss.unwrap()).unwrap().param_grads(&g, &w.store);
        for (j, cell) in w.scene.iter().enumerate() {
            let norm: f64 = cell.ids().iter().filter_map(|&id| grads.get(id)).map(|t| t.sum_squares()).sum();
            if j == visited {
                assert!(norm > 0.0);
            } else {
                assert_eq!(norm, 0.0, "cell {j}");
            }
        }
    }

    #[test]
    fn predict_mode_keeps_only_observed_scene_updates() {
        let w = ModelWeights::init(dims(), 8);
        let b = batch(2);
        let mut bank = GridBank::new(dims().grid, 6, Variant::A);
        run(&b, &mut bank, &w, ForwardOptions::predict(SceneUse::Full));
        // Re-run with a window truncated after the observed part and
        // teacher forcing: the scene states must agree.
        let short = Batch {
            t_pred: 1,
            t_obs: 3,
            targets: b
                .targets
                .iter()
                .map(|t| crate::data::BatchTarget {
                    target_id: t.target_id,
                    positions: t.positions[..4].to_vec(),
                    offsets: t.offsets[..4].to_vec(),
                })
                .collect(),
            ..b.clone()
        };
        let mut bank2 = GridBank::new(dims().grid, 6, Variant::A);
        run(&short, &mut bank2, &w, ForwardOptions::predict(SceneUse::Full));
        assert_eq!(bank, bank2);
        assert!(bank.cells.iter().any(|c| c.h.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn empty_and_mismatched_inputs_are_rejected() {
        let w = ModelWeights::init(dims(), 9);
        let empty = Batch::from_tracks(0, 3, 3, vec![]);
        let mut bank = GridBank::new(dims().grid, 6, Variant::A);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = ForwardOptions::predict(SceneUse::Full);
        assert!(matches!(
            forward_window(&mut g, &empty, &mut bank, &w, &opts, &mut rng),
            Err(ModelError::EmptyBatch)
        ));
        let mut wrong = GridBank::new(dims().grid, 5, Variant::A);
        assert!(matches!(
            forward_window(&mut g, &batch(1), &mut wrong, &w, &opts, &mut rng),
            Err(ModelError::BankMismatch { .. })
        ));
    }
}
