//! Numerical building blocks against hand-written references.

use mardpg_core::numerics::{
    finite_diff_grad, Activation, Adam, AdamConfig, DenseLayer, GradCheck, LstmCell, Matrix, Mlp,
    Parameterized,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line LSTM step: gates in the order input, forget, output, candidate.
fn reference_step(cell: &LstmCell, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut z = h.to_vec();
    z.extend_from_slice(x);
    let pre = |gate: usize, row: usize| -> f64 {
        let w = cell.gate_weights(gate);
        let mut acc = cell.gate_bias(gate)[row];
        for (col, zv) in z.iter().enumerate() {
            acc += w.get(row, col) * zv;
        }
        acc
    };
    let mut h_out = Vec::new();
    let mut c_out = Vec::new();
    for r in 0..cell.hidden_dim() {
        let i = logistic(pre(0, r));
        let f = logistic(pre(1, r));
        let o = logistic(pre(2, r));
        let g = pre(3, r).tanh();
        let cn = f * c[r] + i * g;
        c_out.push(cn);
        h_out.push(o * cn.tanh());
    }
    (h_out, c_out)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lstm_step_matches_reference(seed in any::<u64>(), hidden in 1usize..6, input in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCell::init(hidden, input, &mut rng);
        let h = random_vec(&mut rng, hidden);
        let c = random_vec(&mut rng, hidden);
        let x = random_vec(&mut rng, input);
        let (h1, c1, _) = cell.step(&h, &c, &x).unwrap();
        let (h2, c2) = reference_step(&cell, &h, &c, &x);
        for (a, b) in h1.iter().zip(&h2).chain(c1.iter().zip(&c2)) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn lstm_bptt_matches_finite_differences(seed in any::<u64>(), len in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCell::init(3, 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut rng, 2)).collect();
        let weights: Vec<Vec<f64>> = (0..len).map(|_| random_vec(&mut rng, 3)).collect();
        let run = |cell: &LstmCell| {
            let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
            let mut caches = Vec::new();
            let mut loss = 0.0;
            for (x, w) in xs.iter().zip(&weights) {
                let (h2, c2, cache) = cell.step(&h, &c, x).unwrap();
                loss += h2.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                caches.push(cache);
                h = h2;
                c = c2;
            }
            (loss, caches)
        };
        let (_, caches) = run(&cell);
        let analytic = cell.backward_through_time(&caches, &weights).unwrap();
        let mut probe = cell.clone();
        let numeric = finite_diff_grad(
            |p| {
                probe.set_flat_params(p).unwrap();
                run(&probe).0
            },
            &cell.flat_params(),
            1e-6,
        )
        .unwrap();
        let check = GradCheck::compare(&analytic, &numeric, 1e-4);
        prop_assert!(check.passes(1e-4, 1e-6), "{check:?}");
    }
}

#[test]
fn lstm_param_count_and_forget_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cell = LstmCell::init(4, 5, &mut rng);
    assert_eq!(cell.num_params(), LstmCell::expected_param_count(4, 5));
    assert_eq!(cell.num_params(), 4 * 4 * (4 + 5 + 1));
    assert_eq!(cell.gate_bias(1), &[1.0; 4]);
}

#[test]
fn zero_lstm_keeps_half_of_the_cell() {
    // All pre-activations are 0: i = f = o = 1/2 and g = 0.
    let cell = LstmCell::zeros(2, 1);
    let (h, c, _) = cell.step(&[0.3, -0.2], &[0.8, -0.4], &[1.0]).unwrap();
    assert_eq!(c, vec![0.4, -0.2]);
    assert!((h[0] - 0.5 * 0.4f64.tanh()).abs() < 1e-15);
    assert!((h[1] - 0.5 * (-0.2f64).tanh()).abs() < 1e-15);
}

#[test]
fn dense_layer_by_hand() {
    let w = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.25]]).unwrap();
    let layer = DenseLayer::new(w.clone(), vec![0.1, -1.0], Activation::Relu).unwrap();
    // [1 - 4 + 0.1, 0.5 + 0.5 - 1] = [-2.9, 0]
    assert_eq!(layer.apply(&[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    // [3 - 2 + 0.1, 1.5 + 0.25 - 1] = [1.1, 0.75]
    let y = layer.apply(&[3.0, 1.0]).unwrap();
    assert!((y[0] - 1.1).abs() < 1e-15 && (y[1] - 0.75).abs() < 1e-15);

    let tanh = DenseLayer::new(w, vec![0.0, 0.0], Activation::Tanh).unwrap();
    let y = tanh.apply(&[0.2, 0.1]).unwrap();
    assert!((y[0] - 0.0f64.tanh()).abs() < 1e-15);
    assert!((y[1] - 0.125f64.tanh()).abs() < 1e-15);
}

#[test]
fn mlp_input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = Mlp::init(4, &[7, 5], 2, Activation::Tanh, &mut rng);
    let x = random_vec(&mut rng, 4);
    let w = [0.7, -1.3];
    net.forward(&x).unwrap();
    let mut grad = vec![0.0; net.num_params()];
    let dx = net.backward_accumulate(&w, Some(&mut grad)).unwrap();
    let f = |net: &Mlp, x: &[f64]| {
        let y = net.apply(x).unwrap();
        y[0] * w[0] + y[1] * w[1]
    };
    let num_x = finite_diff_grad(|v| f(&net, v), &x, 1e-6).unwrap();
    assert!(GradCheck::compare(&dx, &num_x, 1e-4).passes(1e-4, 1e-6));
    let mut probe = net.clone();
    let num_p = finite_diff_grad(
        |p| {
            probe.set_flat_params(p).unwrap();
            f(&probe, &x)
        },
        &net.flat_params(),
        1e-6,
    )
    .unwrap();
    assert!(GradCheck::compare(&grad, &num_p, 1e-4).passes(1e-4, 1e-6));
}

#[test]
fn adam_by_hand() {
    let cfg = AdamConfig {
        lr: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut opt = Adam::new(2, cfg);
    let mut p = vec![1.0, -1.0];
    let grads = [[0.5, -2.0], [0.1, 1.0], [-0.3, 0.0]];
    let (mut m, mut v, mut expect) = ([0.0; 2], [0.0; 2], [1.0, -1.0]);
    for (t, g) in grads.iter().enumerate() {
        opt.update_slice(&mut p, g).unwrap();
        let t = t as i32 + 1;
        for k in 0..2 {
            m[k] = 0.9 * m[k] + 0.1 * g[k];
            v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
            let mh = m[k] / (1.0 - 0.9f64.powi(t));
            let vh = v[k] / (1.0 - 0.999f64.powi(t));
            expect[k] -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        for k in 0..2 {
            assert!(
                (p[k] - expect[k]).abs() < 1e-15,
                "step {t}: {} vs {}",
                p[k],
                expect[k]
            );
        }
    }
    assert_eq!(opt.step_count(), 3);
}

#[test]
fn adam_with_zero_rate_is_a_no_op() {
    let mut opt = Adam::new(3, AdamConfig::with_lr(0.0));
    let mut p = vec![0.25, -7.0, 1e-3];
    let before = p.clone();
    for _ in 0..4 {
        opt.update_slice(&mut p, &[3.0, -1.0, 0.5]).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn finite_differences_of_a_cubic() {
    let g = finite_diff_grad(|p| p[0].powi(3) + 2.0 * p[1], &[2.0, 5.0], 1e-5).unwrap();
    assert!((g[0] - 12.0).abs() < 1e-8);
    assert!((g[1] - 2.0).abs() < 1e-8);
    assert!(finite_diff_grad(|p| p[0], &[1.0], 0.0).is_err());
}
