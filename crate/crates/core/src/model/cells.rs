use std::f64::consts::PI;

use crate::autodiff::{AutodiffError, Graph, Var};
use crate::data::Point;

use super::LstmVars;

type Result<T> = std::result::Result<T, AutodiffError>;

fn affine(g: &mut Graph, terms: &[(Var, Var)], bias: Var) -> Result<Var> {
    let mut acc = bias;
    for &(w, v) in terms {
        let m = g.matvec(w, v)?;
        acc = g.add(acc, m)?;
    }
    Ok(acc)
}

/// One peephole LSTM step. The output-gate peephole reads the previous cell
/// state unless `peephole_ct` is set.
pub fn lstm_step(g: &mut Graph, p: &LstmVars, x: Var, h: Var, c: Var, peephole_ct: bool) -> Result<(Var, Var)> {
    let i_pre = affine(g, &[(p.w_ix, x), (p.w_ih, h), (p.w_ic, c)], p.b_i)?;
    let i = g.sigmoid(i_pre)?;
    let f_pre = affine(g, &[(p.w_fx, x), (p.w_fh, h), (p.w_fc, c)], p.b_f)?;
    let f = g.sigmoid(f_pre)?;
    let cand_pre = affine(g, &[(p.w_cx, x), (p.w_ch, h)], p.b_c)?;
    let cand = g.tanh(cand_pre)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let peep = if peephole_ct { c_new } else { c };
    let o_pre = affine(g, &[(p.w_ox, x), (p.w_oh, h), (p.w_oc, peep)], p.b_o)?;
    let o = g.sigmoid(o_pre)?;
    let squashed = g.tanh(c_new)?;
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// `ReLU(W · [dx, dy])`; there is no bias.
pub fn embed(g: &mut Graph, w: Var, offset: Point) -> Result<Var> {
    let x = g.constant_vec(&[offset.x, offset.y]);
    let m = g.matvec(w, x)?;
    g.relu(m)
}

#[derive(Clone, Copy, Debug)]
pub struct PedestrianState {
    pub h: Var,
    pub c: Var,
}

/// Bound parameters of the movement network.
#[derive(Clone, Copy, Debug)]
pub struct PedestrianVars {
    pub embed: Var,
    pub lstm: LstmVars,
    pub head_w: Var,
    pub head_b: Var,
}

/// Advances the pedestrian LSTM on `e` and produces the raw 5-vector head
/// output. `filtered` is the scene contribution (absent means zero);
/// `dropout` is an optional multiplicative mask applied to `h` on the way to
/// the head only.
pub fn pedestrian_step(
    g: &mut Graph,
    net: &PedestrianVars,
    state: PedestrianState,
    e: Var,
    filtered: Option<Var>,
    dropout: Option<Var>,
    peephole_ct: bool,
) -> Result<(PedestrianState, Var)> {
    let (h_raw, c) = lstm_step(g, &net.lstm, e, state.h, state.c, peephole_ct)?;
    let h = g.relu(h_raw)?;
    let mut z = match dropout {
        Some(mask) => g.mul(h, mask)?,
        None => h,
    };
    if let Some(f) = filtered {
        z = g.add(z, f)?;
    }
    let m = g.matvec(net.head_w, z)?;
    let raw = g.add(m, net.head_b)?;
    Ok((PedestrianState { h, c }, raw))
}

/// One step of a cell's scene LSTM on `[one-hot, h_prev]`.
pub fn scene_step(
    g: &mut Graph,
    cell: &LstmVars,
    state: (Var, Var),
    one_hot: &[f64],
    h_prev: Var,
    peephole_ct: bool,
) -> Result<(Var, Var)> {
    let v = g.constant_vec(one_hot);
    let x = g.concat(&[v, h_prev])?;
    lstm_step(g, cell, x, state.0, state.1, peephole_ct)
}

/// Hard filter `ReLU(h_g) * K` followed by the learned soft gate
/// `sigmoid(W_s [e, h_target] + b_s)`.
pub fn scene_data_filter(g: &mut Graph, h_g: Var, control: Var, e: Var, h_target: Var, w_s: Var, b_s: Var) -> Result<Var> {
    let rect = g.relu(h_g)?;
    let hard = g.mul(rect, control)?;
    let joint = g.concat(&[e, h_target])?;
    let pre = affine(g, &[(w_s, joint)], b_s)?;
    let gate = g.sigmoid(pre)?;
    g.mul(gate, hard)
}

/// Bivariate-normal negative log-likelihood of `target` under the raw head
/// output, built from graph primitives so it can be differentiated.
pub fn nll_loss(g: &mut Graph, raw: Var, target: Point) -> Result<Var> {
    let mu = g.slice(raw, 0, 2)?;
    let log_sigma = g.slice(raw, 2, 2)?;
    let rho_raw = g.slice(raw, 4, 1)?;
    let t = g.constant_vec(&[target.x, target.y]);
    let diff = g.sub(t, mu)?;
    let neg_log_sigma = g.scale(log_sigma, -1.0)?;
    let inv_sigma = g.exp(neg_log_sigma)?;
    let z = g.mul(diff, inv_sigma)?;
    let zx = g.slice(z, 0, 1)?;
    let zy = g.slice(z, 1, 1)?;
    let rho = g.tanh(rho_raw)?;

    let zx2 = g.mul(zx, zx)?;
    let zy2 = g.mul(zy, zy)?;
    let zxy = g.mul(zx, zy)?;
    let rzxy = g.mul(rho, zxy)?;
    let cross = g.scale(rzxy, -2.0)?;
    let sq = g.add(zx2, zy2)?;
    let quad = g.add(sq, cross)?;

    let rho2 = g.mul(rho, rho)?;
    let neg_rho2 = g.scale(rho2, -1.0)?;
    let one_minus = g.shift(neg_rho2, 1.0)?;
    let q_over = g.div(quad, one_minus)?;
    let half_q = g.scale(q_over, 0.5)?;
    let log_om = g.log(one_minus)?;
    let half_log = g.scale(log_om, 0.5)?;
    let sum_log_sigma = g.sum(log_sigma)?;

    let a = g.add(sum_log_sigma, half_log)?;
    let b = g.add(a, half_q)?;
    g.shift(b, (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};
    use crate::model::{GaussianParams, LstmParams, ModelDims, ModelWeights};
    use crate::scenegrid::GridConfig;

    fn toy() -> ModelWeights {
        ModelWeights::init(
            ModelDims {
                embed: 4,
                hidden: 3,
                grid: GridConfig::new(2, 2).unwrap(),
            },
            17,
        )
    }

    fn zeroed(w: &ModelWeights) -> ParamStore {
        let mut store = w.store.clone();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        store
    }

    #[test]
    fn zero_weights_keep_zero_state() {
        let w = toy();
        let store = zeroed(&w);
        let mut g = Graph::new();
        let p = w.pedestrian.bind(&mut g, &store);
        let x = g.constant(Tensor::zeros(&[4]));
        let h = g.constant(Tensor::zeros(&[3]));
        let c = g.constant(Tensor::zeros(&[3]));
        let (h2, c2) = lstm_step(&mut g, &p, x, h, c, false).unwrap();
        assert_eq!(g.value(h2).data(), &[0.0; 3]);
        assert_eq!(g.value(c2).data(), &[0.0; 3]);
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let mut store = ParamStore::new();
        let names = ["w_ix", "w_ih", "w_ic", "w_fx", "w_fh", "w_fc", "w_cx", "w_ch", "w_ox", "w_oh", "w_oc", "b_i", "b_f", "b_c", "b_o"];
        let ids: Vec<_> = names
            .iter()
            .map(|n| {
                let t = if n.starts_with('b') { Tensor::zeros(&[1]) } else { Tensor::zeros(&[1, 1]) };
                store.add(*n, t).unwrap()
            })
            .collect();
        let params = LstmParams::from_ids(&ids);
        let mut g = Graph::new();
        let p = params.bind(&mut g, &store);
        let x = g.constant_vec(&[0.7]);
        let h = g.constant_vec(&[-0.3]);
        let c = g.constant_vec(&[2.0]);
        let (h2, c2) = lstm_step(&mut g, &p, x, h, c, false).unwrap();
        assert_eq!(g.value(c2).data(), &[1.0]);
        let expected = 0.5 * 1.0f64.tanh();
        assert!((g.value(h2).item() - expected).abs() < 1e-15);
        assert!((g.value(h2).item() - 0.3808).abs() < 1e-4);
    }

    #[test]
    fn peephole_flag_changes_output_gate_input() {
        let w = toy();
        let mut g = Graph::new();
        let p = w.pedestrian.bind(&mut g, &w.store);
        let x = g.constant_vec(&[0.1, 0.2, 0.3, 0.4]);
        let h = g.constant_vec(&[0.5, -0.5, 0.1]);
        let c = g.constant_vec(&[1.0, -1.0, 0.5]);
        let (a, ca) = lstm_step(&mut g, &p, x, h, c, false).unwrap();
        let (b, cb) = lstm_step(&mut g, &p, x, h, c, true).unwrap();
        assert_eq!(g.value(ca).data(), g.value(cb).data());
        assert_ne!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn lstm_rejects_bad_shapes() {
        let w = toy();
        let mut g = Graph::new();
        let p = w.pedestrian.bind(&mut g, &w.store);
        let x = g.constant_vec(&[0.1, 0.2]);
        let h = g.constant(Tensor::zeros(&[3]));
        let c = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(lstm_step(&mut g, &p, x, h, c, false), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn embedding_properties() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::matrix(&[&[1.0, 0.5], &[-1.0, -2.0], &[0.3, -0.1]]).unwrap());
        let zero = embed(&mut g, w, Point::ZERO).unwrap();
        assert_eq!(g.value(zero).data(), &[0.0; 3]);
        let e = embed(&mut g, w, Point::new(0.2, 0.1)).unwrap();
        assert_eq!(g.value(e).data()[1], 0.0);
        assert!(g.value(e).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_network_outputs_bias_gaussian() {
        let w = toy();
        let mut store = zeroed(&w);
        store.get_mut(w.head_b).data_mut().copy_from_slice(&[0.1, -0.2, 0.3, -0.4, 0.5]);
        let mut g = Graph::new();
        let net = PedestrianVars {
            embed: g.param(w.embed, &store),
            lstm: w.pedestrian.bind(&mut g, &store),
            head_w: g.param(w.head_w, &store),
            head_b: g.param(w.head_b, &store),
        };
        let h = g.constant(Tensor::zeros(&[3]));
        let c = g.constant(Tensor::zeros(&[3]));
        let e = embed(&mut g, net.embed, Point::new(0.3, 0.1)).unwrap();
        let (_, raw) = pedestrian_step(&mut g, &net, PedestrianState { h, c }, e, None, None, false).unwrap();
        let p = GaussianParams::from_raw(g.value(raw).data());
        assert_eq!((p.mu_x, p.mu_y), (0.1, -0.2));
        assert_eq!(p.sigma_x, 0.3f64.exp());
        assert_eq!(p.sigma_y, (-0.4f64).exp());
        assert_eq!(p.rho, 0.5f64.tanh());
    }

    #[test]
    fn scene_inputs_distinguish_subcells() {
        let w = toy();
        let mut g = Graph::new();
        let cell = w.scene[1].bind(&mut g, &w.store);
        let zero = g.constant(Tensor::zeros(&[3]));
        let h_prev = g.constant_vec(&[0.2, 0.0, 0.4]);
        let (a, _) = scene_step(&mut g, &cell, (zero, zero), &[1.0, 0.0, 0.0, 0.0], h_prev, false).unwrap();
        let (b, _) = scene_step(&mut g, &cell, (zero, zero), &[0.0, 0.0, 1.0, 0.0], h_prev, false).unwrap();
        assert_ne!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn filter_bounds_and_saturation() {
        let mut g = Graph::new();
        let h_g = g.constant_vec(&[0.5, -0.2, 0.9]);
        let e = g.constant_vec(&[0.1, 0.0, 0.3, 0.2]);
        let h_t = g.constant_vec(&[0.4, 0.1, 0.0]);
        let w_s = g.constant(Tensor::filled(&[3, 7], 200.0));
        let b_s = g.constant(Tensor::filled(&[3], 200.0));
        let ones = g.constant(Tensor::filled(&[3], 1.0));
        let zeros = g.constant(Tensor::zeros(&[3]));

        let f = scene_data_filter(&mut g, h_g, ones, e, h_t, w_s, b_s).unwrap();
        for (got, want) in g.value(f).data().iter().zip([0.5, 0.0, 0.9]) {
            assert!((got - want).abs() < 1e-12);
        }
        let blocked = scene_data_filter(&mut g, h_g, zeros, e, h_t, w_s, b_s).unwrap();
        assert!(g.value(blocked).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn graph_nll_matches_scalar_oracle() {
        let raws = [[0.0; 5], [0.1, -0.3, -1.2, 0.4, 0.7], [0.5, 0.5, 2.0, -2.0, -1.5]];
        let targets = [Point::ZERO, Point::new(1.0, 0.0), Point::new(-0.3, 0.8)];
        for raw in raws {
            for t in targets {
                let mut g = Graph::new();
                let r = g.constant_vec(&raw);
                let l = nll_loss(&mut g, r, t).unwrap();
                let want = GaussianParams::from_raw(&raw).nll(t);
                assert!((g.value(l).item() - want).abs() < 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn nll_is_stationary_at_the_mean() {
        let mut g = Graph::new();
        let r = g.constant_vec(&[0.2, -0.1, 0.3, -0.5, 0.4]);
        let l = nll_loss(&mut g, r, Point::new(0.2, -0.1)).unwrap();
        let grads = g.backward(l).unwrap();
        let d = grads.wrt(r).unwrap();
        assert!(d[0].abs() < 1e-15 && d[1].abs() < 1e-15);
    }
}
