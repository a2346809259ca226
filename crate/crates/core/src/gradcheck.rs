//! Finite-difference verification of every backward rule and of the full
//! network's loss gradient on a toy configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DerivativeFault, Graph, Tensor, Var};
use crate::data::{Batch, Point};
use crate::model::{forward_window, ForwardOptions, ModelDims, ModelError, ModelWeights, SceneUse};
use crate::scenegrid::{GridBank, GridConfig, Variant};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude below which gradients are compared absolutely. Central
/// differences of an O(10) loss carry round-off of a few 1e-10, which is
/// already 1e-4 of a 1e-6 gradient.
pub const ABS_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Worst relative error observed for one tensor or primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub worst: f64,
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub ops: Vec<CheckResult>,
    pub params: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.ops.iter().chain(&self.params).filter(|c| !c.passed()).collect()
    }

    pub fn worst(&self) -> f64 {
        self.ops.iter().chain(&self.params).map(|c| c.worst).fold(0.0, f64::max)
    }

    /// Worst error per parameter group (`embed`, `ped`, `head`, `scene`, `filter`).
    pub fn by_group(&self) -> Vec<(String, f64)> {
        let mut groups: Vec<(String, f64)> = Vec::new();
        for p in &self.params {
            let group = p.name.split('.').next().unwrap_or("").to_string();
            match groups.iter_mut().find(|(g, _)| *g == group) {
                Some((_, w)) => *w = w.max(p.worst),
                None => groups.push((group, p.worst)),
            }
        }
        groups
    }
}

type Build = fn(&mut Graph, &[Var]) -> Var;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    vec![
        ("matvec", vec![vec![3, 4], vec![4]], |g, v| g.matvec(v[0], v[1]).unwrap()),
        ("add", vec![vec![4], vec![4]], |g, v| g.add(v[0], v[1]).unwrap()),
        ("sub", vec![vec![4], vec![4]], |g, v| g.sub(v[0], v[1]).unwrap()),
        ("mul", vec![vec![4], vec![4]], |g, v| g.mul(v[0], v[1]).unwrap()),
        ("div", vec![vec![4], vec![4]], |g, v| {
            let d = g.shift(v[1], 3.0).unwrap();
            g.div(v[0], d).unwrap()
        }),
        ("concat", vec![vec![2], vec![3]], |g, v| g.concat(&[v[0], v[1]]).unwrap()),
        ("slice", vec![vec![5]], |g, v| g.slice(v[0], 1, 3).unwrap()),
        ("sigmoid", vec![vec![4]], |g, v| g.sigmoid(v[0]).unwrap()),
        ("tanh", vec![vec![4]], |g, v| g.tanh(v[0]).unwrap()),
        ("relu", vec![vec![4]], |g, v| g.relu(v[0]).unwrap()),
        ("exp", vec![vec![4]], |g, v| g.exp(v[0]).unwrap()),
        ("log", vec![vec![4]], |g, v| {
            let p = g.shift(v[0], 3.0).unwrap();
            g.log(p).unwrap()
        }),
        ("scale", vec![vec![4]], |g, v| g.scale(v[0], -1.7).unwrap()),
        ("shift", vec![vec![4]], |g, v| g.shift(v[0], 0.4).unwrap()),
        ("sum", vec![vec![4]], |g, v| g.sum(v[0]).unwrap()),
    ]
}

/// Checks one primitive: the loss is a fixed random projection of its output.
fn check_op(name: &str, shapes: &[Vec<usize>], build: Build, rng: &mut ChaCha8Rng, fault: Option<DerivativeFault>) -> CheckResult {
    let inputs: Vec<Tensor> = shapes
        .iter()
        .map(|s| {
            let mut t = Tensor::zeros(s);
            for v in t.data_mut() {
                // Keep clear of the ReLU kink.
                let mag = rng.random_range(0.1..1.5);
                *v = if rng.random_bool(0.5) { mag } else { -mag };
            }
            t
        })
        .collect();
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        let n = g.value(out).len();
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()
    };
    let eval = |inputs: &[Tensor], fault: Option<DerivativeFault>| {
        let mut g = Graph::with_fault(fault);
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        let w = g.constant_vec(&probe);
        let prod = g.mul(out, w).expect("probe matches output");
        let loss = g.sum(prod).expect("sum");
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(&inputs, fault);
    let grads = g.backward(loss).expect("scalar loss");
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt_dense(&g, *var);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            let (gp, _, lp) = eval(&plus, None);
            let (gm, _, lm) = eval(&minus, None);
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
            checked += 1;
        }
    }
    CheckResult {
        name: name.to_string(),
        worst,
        checked,
    }
}

pub fn toy_dims() -> ModelDims {
    ModelDims {
        embed: 4,
        hidden: 8,
        grid: GridConfig::new(2, 4).expect("valid toy grid"),
    }
}

/// Two targets wandering across the 2x2 grid for six instants.
pub fn toy_batch(seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c);
    let tracks = (0..2u64)
        .map(|id| {
            let mut p = Point::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
            let mut pts = vec![p];
            for _ in 1..6 {
                p = Point::new(
                    (p.x + rng.random_range(-0.3..0.3)).clamp(-0.95, 0.95),
                    (p.y + rng.random_range(-0.3..0.3)).clamp(-0.95, 0.95),
                );
                pts.push(p);
            }
            (id + 1, pts)
        })
        .collect();
    Batch::from_tracks(0, 3, 3, tracks)
}

fn window_loss(weights: &ModelWeights, batch: &Batch, fault: Option<DerivativeFault>) -> Result<(Graph, Var), ModelError> {
    let mut g = Graph::with_fault(fault);
    let mut bank = GridBank::new(weights.dims.grid, weights.dims.hidden, Variant::A);
    let opts = ForwardOptions::train(SceneUse::Full, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward_window(&mut g, batch, &mut bank, weights, &opts, &mut rng)?;
    Ok((g, out.loss.expect("training loss")))
}

/// Compares the network's loss gradient for every parameter entry against
/// central differences on the toy window.
pub fn check_model(seed: u64, fault: Option<DerivativeFault>) -> Result<Vec<CheckResult>, ModelError> {
    check_model_on(&toy_batch(seed), seed, fault)
}

/// Same as [`check_model`] for an arbitrary window over the toy grid.
pub fn check_model_on(batch: &Batch, seed: u64, fault: Option<DerivativeFault>) -> Result<Vec<CheckResult>, ModelError> {
    let mut weights = ModelWeights::init(toy_dims(), seed);
    let batch = batch.clone();
    let (g, loss) = window_loss(&weights, &batch, fault)?;
    let grads = g.backward(loss)?.param_grads(&g, &weights.store);
    let ids: Vec<_> = weights.store.ids().collect();
    let mut results = Vec::with_capacity(ids.len());
    for id in ids {
        let name = weights.store.name(id).to_string();
        let n = weights.store.get(id).len();
        let analytic = grads.get(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = weights.store.get(id).data()[i];
            weights.store.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let (gp, lp) = window_loss(&weights, &batch, None)?;
            weights.store.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let (gm, lm) = window_loss(&weights, &batch, None)?;
            weights.store.get_mut(id).data_mut()[i] = orig;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        results.push(CheckResult {
            name,
            worst,
            checked: n,
        });
    }
    Ok(results)
}

/// Every primitive, then every model parameter.
pub fn run_gradcheck(seed: u64, fault: Option<DerivativeFault>) -> Result<GradcheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = op_cases()
        .into_iter()
        .map(|(name, shapes, build)| check_op(name, &shapes, build, &mut rng, fault))
        .collect();
    let params = check_model(seed, fault)?;
    Ok(GradcheckReport { ops, params })
}

/// Names of every primitive covered by the op-level checks.
pub fn checked_ops() -> Vec<&'static str> {
    op_cases().into_iter().map(|(n, _, _)| n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::OpKind;

    fn all_op_kinds_named() -> [&'static str; 15] {
        [
            OpKind::MatVec.name(),
            OpKind::Add.name(),
            OpKind::Sub.name(),
            OpKind::Mul.name(),
            OpKind::Div.name(),
            OpKind::Concat.name(),
            OpKind::Slice { start: 0, len: 1 }.name(),
            OpKind::Sigmoid.name(),
            OpKind::Tanh.name(),
            OpKind::Relu.name(),
            OpKind::Exp.name(),
            OpKind::Log.name(),
            OpKind::Scale(1.0).name(),
            OpKind::Shift(0.0).name(),
            OpKind::Sum.name(),
        ]
    }

    #[test]
    fn every_primitive_is_covered() {
        let covered = checked_ops();
        for op in all_op_kinds_named() {
            assert!(covered.contains(&op), "{op} not checked");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-4).abs() < 1e-15);
    }
}
