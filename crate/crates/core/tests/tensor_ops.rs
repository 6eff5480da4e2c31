mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use regcgan::tensor::{grad_check, Graph, Tensor, Var};

#[test]
fn matmul_matches_naive_and_finite_differences() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (m, k, n) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..6));
        let a = random_tensor(&mut r, &[m, k]);
        let b = random_tensor(&mut r, &[k, n]);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(av, bv).unwrap();
        assert!(max_abs_diff(g.value(c), &naive_matmul(&a, &b)) < 1e-10);
    }
    let a = random_tensor(&mut r, &[3, 4]);
    let b = random_tensor(&mut r, &[4, 2]);
    let y = random_tensor(&mut r, &[3, 2]);
    let fa = |g: &mut Graph, v: Var| {
        let bv = g.constant(b.clone());
        let yv = g.constant(y.clone());
        let c = g.matmul(v, bv)?;
        let p = g.mul(c, yv)?;
        Ok(g.sum(p))
    };
    assert!(grad_check(fa, &a, 1e-5, 1e-4).unwrap().passed());
    let fb = |g: &mut Graph, v: Var| {
        let av = g.constant(a.clone());
        let yv = g.constant(y.clone());
        let c = g.matmul(av, v)?;
        let p = g.mul(c, yv)?;
        Ok(g.sum(p))
    };
    assert!(grad_check(fb, &b, 1e-5, 1e-4).unwrap().passed());
}

#[test]
fn conv2d_stride2_pad1_matches_naive_and_gradients() {
    let mut r = rng(2);
    // (6 + 2 − 3) / 2 + 1 is not integral, so 6×6 is rejected and 7×7 used
    let mut g = Graph::new();
    let x6 = g.constant(random_tensor(&mut r, &[1, 2, 6, 6]));
    let w3 = g.constant(random_tensor(&mut r, &[3, 2, 3, 3]));
    assert!(matches!(g.conv2d(x6, w3, None, 2, 1), Err(regcgan::Error::Geometry(_))));

    let x = random_tensor(&mut r, &[1, 2, 7, 7]);
    let w = random_tensor(&mut r, &[3, 2, 3, 3]);
    let bias = random_tensor(&mut r, &[3]);
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv2d(xv, wv, None, 2, 1).unwrap();
    assert_eq!(g.value(y).dims(), &[1, 3, 4, 4]);
    assert!(max_abs_diff(g.value(y), &naive_conv2d(&x, &w, 2, 1)) < 1e-10);

    let probe = random_tensor(&mut r, &[1, 3, 4, 4]);
    let loss = |g: &mut Graph, x: Var, w: Var, b: Var| {
        let y = g.conv2d(x, w, Some(b), 2, 1)?;
        let p = g.constant(probe.clone());
        let m = g.mul(y, p)?;
        let t = g.tanh(m);
        Ok(g.sum(t))
    };
    let rx = grad_check(
        |g, v| {
            let (w, b) = (g.constant(w.clone()), g.constant(bias.clone()));
            loss(g, v, w, b)
        },
        &x,
        1e-5,
        1e-4,
    )
    .unwrap();
    let rw = grad_check(
        |g, v| {
            let (x, b) = (g.constant(x.clone()), g.constant(bias.clone()));
            loss(g, x, v, b)
        },
        &w,
        1e-5,
        1e-4,
    )
    .unwrap();
    let rb = grad_check(
        |g, v| {
            let (x, w) = (g.constant(x.clone()), g.constant(w.clone()));
            loss(g, x, w, v)
        },
        &bias,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(rx.passed() && rw.passed() && rb.passed(), "{rx:?} {rw:?} {rb:?}");
}

#[test]
fn convolutions_match_naive_on_random_geometries() {
    let mut r = rng(3);
    for _ in 0..100 {
        let geo = random_conv_geometry(&mut r);
        let x = random_tensor(&mut r, &[geo.batch, geo.c_in, geo.h, geo.w]);
        let w = random_tensor(&mut r, &[geo.c_out, geo.c_in, geo.k, geo.k]);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv2d(xv, wv, None, geo.stride, geo.pad).unwrap();
        let expected = naive_conv2d(&x, &w, geo.stride, geo.pad);
        assert!(max_abs_diff(g.value(y), &expected) < 1e-10);

        // transposed conv maps conv outputs back to conv inputs
        let yt = random_tensor(&mut r, expected.dims());
        let ytv = g.constant(yt.clone());
        let xt = g.conv2d_transpose(ytv, wv, None, geo.stride, geo.pad).unwrap();
        assert_eq!(g.value(xt).dims(), x.dims());
        let naive_t = naive_conv2d_transpose(&yt, &w, geo.stride, geo.pad);
        assert!(max_abs_diff(g.value(xt), &naive_t) < 1e-10);

        let lhs = g.value(y).dot(&yt);
        let rhs = x.dot(g.value(xt));
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1.0));
    }
}

#[test]
fn conv_transpose_gradients() {
    let mut r = rng(4);
    for _ in 0..20 {
        let geo = random_conv_geometry(&mut r);
        let w = random_tensor(&mut r, &[geo.c_out, geo.c_in, geo.k, geo.k]);
        let ho = (geo.h + 2 * geo.pad - geo.k) / geo.stride + 1;
        let wo = (geo.w + 2 * geo.pad - geo.k) / geo.stride + 1;
        let x = random_tensor(&mut r, &[geo.batch, geo.c_out, ho, wo]);
        let b = random_tensor(&mut r, &[geo.c_in]);
        let probe = random_tensor(&mut r, &[geo.batch, geo.c_in, geo.h, geo.w]);
        let f = |g: &mut Graph, x: Var, w: Var, b: Var| {
            let y = g.conv2d_transpose(x, w, Some(b), geo.stride, geo.pad)?;
            let p = g.constant(probe.clone());
            let m = g.mul(y, p)?;
            let s = g.sigmoid(m);
            Ok(g.sum(s))
        };
        let rx = grad_check(
            |g, v| {
                let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
                f(g, v, wv, bv)
            },
            &x,
            1e-5,
            1e-3,
        )
        .unwrap();
        let rw = grad_check(
            |g, v| {
                let (xv, bv) = (g.constant(x.clone()), g.constant(b.clone()));
                f(g, xv, v, bv)
            },
            &w,
            1e-5,
            1e-3,
        )
        .unwrap();
        let rb = grad_check(
            |g, v| {
                let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
                f(g, xv, wv, v)
            },
            &b,
            1e-5,
            1e-3,
        )
        .unwrap();
        assert!(rx.passed() && rw.passed() && rb.passed());
    }
}

#[test]
fn elementwise_and_structural_gradients() {
    let mut r = rng(5);
    type Op = fn(&mut Graph, Var) -> regcgan::Result<Var>;
    let ops: Vec<(&str, Op)> = vec![
        ("neg", |g, v| Ok(g.neg(v))),
        ("scale", |g, v| Ok(g.scale(v, -1.7))),
        ("relu", |g, v| Ok(g.relu(v))),
        ("leaky_relu", |g, v| Ok(g.leaky_relu(v, 0.2))),
        ("sigmoid", |g, v| Ok(g.sigmoid(v))),
        ("tanh", |g, v| Ok(g.tanh(v))),
        ("softplus", |g, v| Ok(g.softplus(v))),
        ("mul_self", |g, v| g.mul(v, v)),
        ("sub_scaled", |g, v| {
            let s = g.scale(v, 0.5);
            g.sub(v, s)
        }),
        ("add_const", |g, v| {
            let c = g.constant(Tensor::full(&[2, 6], 0.3).unwrap());
            g.add(v, c)
        }),
        ("reshape", |g, v| g.reshape(v, &[3, 4])),
        ("concat", |g, v| {
            let t = g.tanh(v);
            g.concat(&[v, t, v], 1)
        }),
        ("slice_batch", |g, v| {
            let (a, b) = (g.slice_batch(v, 0, 1)?, g.slice_batch(v, 1, 2)?);
            let s = g.sigmoid(a);
            g.concat(&[b, s, b], 0)
        }),
    ];
    for (name, op) in &ops {
        for _ in 0..20 {
            let x = random_tensor(&mut r, &[2, 6]);
            let w = random_tensor(&mut r, &[12]);
            let f = |g: &mut Graph, v: Var| {
                let y = op(g, v)?;
                let n = g.value(y).numel();
                let flat = g.reshape(y, &[n])?;
                let wrep: Vec<f64> = (0..n).map(|i| w.data()[i % 12]).collect();
                let wv = g.constant(Tensor::new(&[n], wrep).unwrap());
                let p = g.mul(flat, wv)?;
                let t = g.tanh(p);
                Ok(g.sum(t))
            };
            let report = grad_check(f, &x, 1e-5, 1e-3).unwrap();
            assert!(report.passed(), "{name}: {report:?}");
        }
    }
}

#[test]
fn reductions_bias_batchnorm_and_losses_gradients() {
    let mut r = rng(6);
    for _ in 0..20 {
        let x = random_tensor(&mut r, &[3, 2, 2, 2]);
        let target = random_tensor(&mut r, &[3, 2, 2, 2]);
        let bias = random_tensor(&mut r, &[2]);
        let f = |g: &mut Graph, v: Var| {
            let b = g.constant(bias.clone());
            let y = g.add_bias(v, b)?;
            let t = g.constant(target.clone());
            let d = g.squared_l2(y, t)?;
            let m = g.mean(y);
            let s = g.add(d, m)?;
            Ok(s)
        };
        assert!(grad_check(f, &x, 1e-5, 1e-3).unwrap().passed());

        let scale = random_tensor(&mut r, &[2]);
        let shift = random_tensor(&mut r, &[2]);
        let probe = random_tensor(&mut r, &[3, 2, 2, 2]);
        let bn = |g: &mut Graph, v: Var| {
            let (s, b) = (g.constant(scale.clone()), g.constant(shift.clone()));
            let (y, _) = g.batch_norm(v, s, b, None)?;
            let p = g.constant(probe.clone());
            let m = g.mul(y, p)?;
            let t = g.tanh(m);
            Ok(g.sum(t))
        };
        assert!(grad_check(bn, &x, 1e-5, 1e-3).unwrap().passed());
        let bn_scale = |g: &mut Graph, v: Var| {
            let (xv, b) = (g.constant(x.clone()), g.constant(shift.clone()));
            let (y, _) = g.batch_norm(xv, v, b, None)?;
            let p = g.constant(probe.clone());
            let m = g.mul(y, p)?;
            Ok(g.sum(m))
        };
        assert!(grad_check(bn_scale, &scale, 1e-5, 1e-3).unwrap().passed());

        let logits = random_tensor(&mut r, &[4, 3]);
        let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
        let ce = |g: &mut Graph, v: Var| g.softmax_cross_entropy(v, &labels);
        assert!(grad_check(ce, &logits, 1e-5, 1e-3).unwrap().passed());
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut r = rng(7);
        let x = random_tensor(&mut r, &[2, 3, 6, 6]);
        let w = random_tensor(&mut r, &[4, 3, 3, 3]);
        let mut g = Graph::new();
        let (xv, wv) = (g.param(x), g.param(w));
        let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
        let t = g.tanh(y);
        let s = g.sum(t);
        let grads = g.backward(s).unwrap();
        (g.value(s).item(), grads.get(xv), grads.get(wv))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

proptest! {
    #[test]
    fn squared_l2_is_symmetric_and_nonnegative(
        a in prop::collection::vec(-10.0f64..10.0, 6),
        b in prop::collection::vec(-10.0f64..10.0, 6),
    ) {
        let mut g = Graph::new();
        let av = g.constant(Tensor::new(&[6], a).unwrap());
        let bv = g.constant(Tensor::new(&[6], b).unwrap());
        let ab = g.squared_l2(av, bv).unwrap();
        let ba = g.squared_l2(bv, av).unwrap();
        prop_assert_eq!(g.value(ab).item(), g.value(ba).item());
        prop_assert!(g.value(ab).item() >= 0.0);
    }

    #[test]
    fn adjoint_identity_holds(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let geo = random_conv_geometry(&mut r);
        let x = random_tensor(&mut r, &[geo.batch, geo.c_in, geo.h, geo.w]);
        let w = random_tensor(&mut r, &[geo.c_out, geo.c_in, geo.k, geo.k]);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w));
        let y = g.conv2d(xv, wv, None, geo.stride, geo.pad).unwrap();
        let probe = random_tensor(&mut r, g.value(y).dims());
        let pv = g.constant(probe.clone());
        let xt = g.conv2d_transpose(pv, wv, None, geo.stride, geo.pad).unwrap();
        let lhs = g.value(y).dot(&probe);
        let rhs = x.dot(g.value(xt));
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1.0));
    }
}
