use proptest::prelude::*;
use regcgan::nn::{GradMap, ParamStore};
use regcgan::optim::{AdamConfig, AdamState};
use regcgan::tensor::Tensor;

fn store(name: &str, v: &[f64]) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert(name, Tensor::new(&[v.len()], v.to_vec()).unwrap()).unwrap();
    s
}

fn grads(name: &str, g: &[f64]) -> GradMap {
    [(name.to_string(), Tensor::new(&[g.len()], g.to_vec()).unwrap())].into()
}

/// Textbook Adam on a plain vector.
fn reference(theta: &mut [f64], seq: &[Vec<f64>], lr: f64) {
    let (b1, b2, eps) = (0.5f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for (t, g) in seq.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            theta[i] -= lr * (m[i] / (1.0 - b1.powi(t))) / ((v[i] / (1.0 - b2.powi(t))).sqrt() + eps);
        }
    }
}

#[test]
fn matches_reference_over_many_steps() {
    let seq: Vec<Vec<f64>> = (0..50)
        .map(|t| vec![(t as f64 * 0.7).sin(), -(t as f64) * 0.01, 3.0])
        .collect();
    let mut want = vec![0.1, -0.2, 0.3];
    reference(&mut want, &seq, 5e-4);
    let mut p = store("w", &[0.1, -0.2, 0.3]);
    let mut st = AdamState::new(AdamConfig::with_lr(5e-4), &[&p]);
    for g in &seq {
        st.step(&mut [&mut p], &grads("w", g)).unwrap();
    }
    for (a, b) in p.get("w").unwrap().data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(st.v["w"].data().iter().all(|&x| x >= 0.0));
}

#[test]
fn shared_state_over_two_stores_counts_one_step() {
    let mut d = store("disc.w", &[1.0]);
    let mut c = store("cls.w", &[2.0]);
    let mut st = AdamState::new(AdamConfig::with_lr(0.01), &[&d, &c]);
    let mut g = grads("disc.w", &[1.0]);
    g.extend(grads("cls.w", &[-1.0]));
    st.step(&mut [&mut d, &mut c], &g).unwrap();
    assert_eq!(st.t, 1);
    assert!(d.get("disc.w").unwrap().data()[0] < 1.0);
    assert!(c.get("cls.w").unwrap().data()[0] > 2.0);
}

#[test]
fn identical_runs_are_bit_identical() {
    let run = || {
        let mut p = store("w", &[0.5, 0.5]);
        let mut st = AdamState::new(AdamConfig::with_lr(2e-4), &[&p]);
        for t in 0..20 {
            st.step(&mut [&mut p], &grads("w", &[t as f64, 1.0 / (t as f64 + 1.0)]))
                .unwrap();
        }
        (p, st)
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn step_size_is_bounded_by_bias_corrected_rate(
        seq in prop::collection::vec(-1e6f64..1e6, 1..30),
        lr in 1e-5f64..1e-1,
    ) {
        let mut p = store("w", &[0.0]);
        let mut st = AdamState::new(AdamConfig::with_lr(lr), &[&p]);
        for g in seq {
            let before = p.get("w").unwrap().data()[0];
            st.step(&mut [&mut p], &grads("w", &[g])).unwrap();
            let delta = (p.get("w").unwrap().data()[0] - before).abs();
            let c1 = 1.0 - 0.5f64.powi(st.t as i32);
            let c2 = 1.0 - 0.999f64.powi(st.t as i32);
            // Cauchy–Schwarz on the moment sums, any gradient sequence
            let ratio: f64 = 0.25 / 0.999;
            let geom = (1.0 - ratio.powi(st.t as i32)) / (1.0 - ratio);
            let bound = lr * c2.sqrt() / c1 * 0.5 / 0.001f64.sqrt() * geom.sqrt();
            prop_assert!(delta <= bound * (1.0 + 1e-9), "delta {} bound {}", delta, bound);
        }
    }
}

proptest! {
    #[test]
    fn constant_gradient_moves_exactly_lr_and_scale_is_irrelevant(
        seq in prop::collection::vec(prop_oneof![-10.0f64..-0.1, 0.1f64..10.0], 1..20),
        scale in 1.0f64..1e6,
    ) {
        let run = |k: f64| {
            let mut p = store("w", &[0.0]);
            let mut st = AdamState::new(AdamConfig::with_lr(1e-3), &[&p]);
            let mut path = Vec::new();
            for &g in &seq {
                st.step(&mut [&mut p], &grads("w", &[g * k])).unwrap();
                path.push(p.get("w").unwrap().data()[0]);
            }
            path
        };
        let (a, b) = (run(1.0), run(scale));
        for (x, y) in a.iter().zip(&b) {
            // ε/|g| is the only scale-dependent term
            prop_assert!((x - y).abs() < 1e-3 * 20.0 * 1e-7);
        }
        let mut p = store("w", &[0.0]);
        let mut st = AdamState::new(AdamConfig::with_lr(1e-3), &[&p]);
        for _ in 0..seq.len() {
            let before = p.get("w").unwrap().data()[0];
            st.step(&mut [&mut p], &grads("w", &[-scale])).unwrap();
            let delta = p.get("w").unwrap().data()[0] - before;
            prop_assert!((delta - 1e-3).abs() < 1e-3 * 1e-8 * 1.01);
        }
    }
}
