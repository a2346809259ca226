use proptest::prelude::*;
use scene_lstm::autodiff::{DerivativeFault, Graph, Tensor, Var};
use scene_lstm::data::{Batch, Point};
use scene_lstm::gradcheck::{check_model, check_model_on, run_gradcheck, TOLERANCE};

const H: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Derivative of each elementwise op written out by hand.
fn closed_form(op: &str, x: f64) -> f64 {
    match op {
        "sigmoid" => sigmoid(x) * (1.0 - sigmoid(x)),
        "tanh" => 1.0 - x.tanh().powi(2),
        "relu" => f64::from(x > 0.0),
        "exp" => x.exp(),
        "log" => 1.0 / x,
        _ => unreachable!(),
    }
}

fn unary(g: &mut Graph, op: &str, x: Var) -> Var {
    match op {
        "sigmoid" => g.sigmoid(x),
        "tanh" => g.tanh(x),
        "relu" => g.relu(x),
        "exp" => g.exp(x),
        "log" => g.log(x),
        _ => unreachable!(),
    }
    .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Scalar loss `sum(w * f(inputs))` and its gradient with respect to every input.
fn grad_of(inputs: &[Tensor], w: &[f64], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars);
    let wv = g.constant_vec(w);
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    (g.value(loss).item(), vars.iter().map(|v| grads.wrt_dense(&g, *v)).collect())
}

fn fd_check(inputs: Vec<Tensor>, w: &[f64], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let (_, analytic) = grad_of(&inputs, w, f);
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let mut p = inputs.clone();
            p[k].data_mut()[i] += H;
            let mut m = inputs.clone();
            m[k].data_mut()[i] -= H;
            let numeric = (grad_of(&p, w, f).0 - grad_of(&m, w, f).0) / (2.0 * H);
            worst = worst.max(rel(analytic[k][i], numeric));
        }
    }
    worst
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn elementwise_ops_match_closed_forms(x in vec3(), w in vec3()) {
        for op in ["sigmoid", "tanh", "relu", "exp"] {
            let (_, grads) = grad_of(&[Tensor::vector(&x)], &w, &|g, v| unary(g, op, v[0]));
            for i in 0..3 {
                prop_assert!((grads[0][i] - w[i] * closed_form(op, x[i])).abs() < 1e-12, "{op}");
            }
        }
        let pos: Vec<f64> = x.iter().map(|v| v + 2.5).collect();
        let (_, grads) = grad_of(&[Tensor::vector(&pos)], &w, &|g, v| unary(g, "log", v[0]));
        for i in 0..3 {
            prop_assert!((grads[0][i] - w[i] * closed_form("log", pos[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn primitives_match_finite_differences(a in vec3(), b in vec3(), w in vec3(), m in prop::collection::vec(-2.0..2.0f64, 6)) {
        // Keep away from the ReLU kink, where central differences straddle it.
        prop_assume!(a.iter().all(|v| v.abs() > 1e-3));
        let (a, b, mat) = (Tensor::vector(&a), Tensor::vector(&b), Tensor::new(vec![3, 2], m).unwrap());
        type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>);
        let cases: Vec<Case> = vec![
            ("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
            ("sub", vec![a.clone(), b.clone()], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
            ("mul", vec![a.clone(), b.clone()], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
            ("div", vec![a.clone(), b.clone()], Box::new(|g, v| {
                let d = g.shift(v[1], 2.5).unwrap();
                g.div(v[0], d).unwrap()
            })),
            ("sigmoid", vec![a.clone()], Box::new(|g, v| g.sigmoid(v[0]).unwrap())),
            ("tanh", vec![a.clone()], Box::new(|g, v| g.tanh(v[0]).unwrap())),
            ("relu", vec![a.clone()], Box::new(|g, v| g.relu(v[0]).unwrap())),
            ("exp", vec![a.clone()], Box::new(|g, v| g.exp(v[0]).unwrap())),
            ("log", vec![a.clone()], Box::new(|g, v| {
                let p = g.shift(v[0], 2.5).unwrap();
                g.log(p).unwrap()
            })),
            ("scale", vec![a.clone()], Box::new(|g, v| g.scale(v[0], -1.3).unwrap())),
            ("shift", vec![a.clone()], Box::new(|g, v| g.shift(v[0], 0.7).unwrap())),
            ("concat+slice", vec![a.clone(), b.clone()], Box::new(|g, v| {
                let c = g.concat(&[v[0], v[1]]).unwrap();
                g.slice(c, 2, 3).unwrap()
            })),
            ("sum", vec![a.clone()], Box::new(|g, v| {
                let s = g.sum(v[0]).unwrap();
                let t = g.concat(&[s, s, s]).unwrap();
                g.tanh(t).unwrap()
            })),
            ("matvec", vec![mat, a.clone()], Box::new(|g, v| {
                let x = g.slice(v[1], 0, 2).unwrap();
                g.matvec(v[0], x).unwrap()
            })),
        ];
        for (name, inputs, f) in &cases {
            let worst = fd_check(inputs.clone(), &w, f.as_ref());
            prop_assert!(worst < 1e-6, "{name}: {worst}");
        }
    }

    #[test]
    fn sigmoid_chain_is_the_product_of_derivatives(x in -2.0..2.0f64, n in 1usize..12) {
        let mut g = Graph::new();
        let x0 = g.constant_vec(&[x]);
        let mut v = x0;
        for _ in 0..n {
            v = g.sigmoid(v).unwrap();
        }
        let loss = g.sum(v).unwrap();
        let grad = g.backward(loss).unwrap().wrt_dense(&g, x0)[0];
        let (mut value, mut expected) = (x, 1.0);
        for _ in 0..n {
            expected *= sigmoid(value) * (1.0 - sigmoid(value));
            value = sigmoid(value);
        }
        prop_assert!((grad - expected).abs() < 1e-10);
    }
}

#[test]
fn matvec_gradient_is_the_outer_product() {
    let m = vec![0.3, -1.2, 0.8, 1.9, -0.4, 0.5];
    let x = vec![1.1, -0.7];
    let w = vec![0.2, -0.9, 1.4];
    // Gradient of w·(M x) is w xᵀ for M and Mᵀ w for x.
    let mut g = Graph::new();
    let mv = g.constant(Tensor::new(vec![3, 2], m.clone()).unwrap());
    let xv = g.constant_vec(&x);
    let y = g.matvec(mv, xv).unwrap();
    let wv = g.constant_vec(&w);
    let p = g.mul(y, wv).unwrap();
    let loss = g.sum(p).unwrap();
    let grads = g.backward(loss).unwrap();
    let gm = grads.wrt_dense(&g, mv);
    let gx = grads.wrt_dense(&g, xv);
    for i in 0..3 {
        for j in 0..2 {
            assert!((gm[2 * i + j] - w[i] * x[j]).abs() < 1e-15);
        }
    }
    for j in 0..2 {
        let expected: f64 = (0..3).map(|i| m[2 * i + j] * w[i]).sum();
        assert!((gx[j] - expected).abs() < 1e-15);
    }
}

#[test]
fn full_model_on_a_three_frame_window() {
    let tracks = vec![
        (1, vec![Point::new(-0.5, -0.4), Point::new(-0.3, -0.35), Point::new(-0.1, -0.2)]),
        (2, vec![Point::new(0.6, 0.2), Point::new(0.4, 0.1), Point::new(0.35, -0.1)]),
    ];
    let batch = Batch::from_tracks(0, 2, 1, tracks);
    let results = check_model_on(&batch, 5, None).unwrap();
    for r in &results {
        assert!(r.worst < TOLERANCE, "{}: {}", r.name, r.worst);
    }
    assert!(results.iter().any(|r| r.name.starts_with("scene.")));
    assert!(results.iter().any(|r| r.name.starts_with("filter.")));
}

#[test]
fn full_model_verdict_is_stable_across_seeds() {
    for seed in 1..=10 {
        let results = check_model(seed, None).unwrap();
        let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
        assert!(worst < TOLERANCE, "seed {seed}: {worst}");
    }
}

#[test]
fn corrupted_sigmoid_derivative_is_caught_and_named() {
    let fault = DerivativeFault {
        op: "sigmoid",
        factor: 1.5,
    };
    let report = run_gradcheck(1, Some(fault)).unwrap();
    assert!(!report.passed());
    let failing: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
    assert!(failing.contains(&"sigmoid"), "{failing:?}");
    assert!(report.ops.iter().filter(|c| !c.passed()).all(|c| c.name == "sigmoid"));
}

#[test]
fn clean_build_passes() {
    let report = run_gradcheck(1, None).unwrap();
    assert!(report.passed(), "{:?}", report.failures());
    assert!(report.worst() < TOLERANCE);
    let groups: Vec<String> = report.by_group().into_iter().map(|(g, _)| g).collect();
    for g in ["embed", "ped", "head", "scene", "filter"] {
        assert!(groups.iter().any(|x| x == g), "{g}");
    }
}
