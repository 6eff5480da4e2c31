use regcgan::data::{make_rings2d, Affine2, DomainDataset};
use regcgan::nn::{DomainVar, Mode, ParamStore};
use regcgan::objectives::{gan_d_loss, gan_g_loss, LossVariant, LossWeights};
use regcgan::optim::{AdamConfig, AdamState};
use regcgan::tensor::Graph;
use regcgan::trainer::{
    checkpoint_bytes, continue_training, load_checkpoint, parse_checkpoint, read_metrics_csv, train, DatasetSpec,
    NetConfig, RingsSpec, TrainConfig, TrainState,
};
use regcgan::Error;

fn rings_config(iterations: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        iterations,
        checkpoint_every: 0,
        net: NetConfig {
            latent_dim: 8,
            width: 4,
            hidden: 16,
        },
        dataset: DatasetSpec::Rings(RingsSpec {
            n: 200,
            scale: 1.5,
            rotation_deg: 30.0,
            translation: [0.5, -0.25],
            seed: 9,
        }),
        ..TrainConfig::default()
    }
}

fn glyph_config(iterations: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        iterations,
        checkpoint_every: 0,
        net: NetConfig {
            latent_dim: 8,
            width: 4,
            hidden: 8,
        },
        dataset: DatasetSpec::Glyphs {
            n: 40,
            resolution: 8,
            transform: regcgan::data::GlyphTransform::Negative,
            seed: 1,
        },
        ..TrainConfig::default()
    }
}

fn snapshot(s: &ParamStore) -> Vec<(String, Vec<u64>)> {
    s.iter()
        .map(|(k, t)| (k.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn updates_touch_only_their_own_player() {
    for mut config in [glyph_config(1), rings_config(1)] {
        config.uda = true;
        let ds = config.dataset.build().unwrap();
        let mut s = TrainState::new(config, &ds).unwrap();
        let batch = s.next_batch(&ds).unwrap();

        let (g0, d0) = (snapshot(&s.model.gen.params), snapshot(&s.model.disc.params));
        let c0 = snapshot(&s.model.cls.as_ref().unwrap().params);
        let running = s.model.gen.running.clone();
        s.update_d(&batch).unwrap();
        assert_eq!(snapshot(&s.model.gen.params), g0);
        assert_eq!(s.model.gen.running, running);
        assert_ne!(snapshot(&s.model.disc.params), d0);
        assert_ne!(snapshot(&s.model.cls.as_ref().unwrap().params), c0);
        assert_eq!(s.adam_g.t, 0);

        let (d1, c1) = (
            snapshot(&s.model.disc.params),
            snapshot(&s.model.cls.as_ref().unwrap().params),
        );
        s.update_g(&batch).unwrap();
        assert_eq!(snapshot(&s.model.disc.params), d1);
        assert_eq!(snapshot(&s.model.cls.as_ref().unwrap().params), c1);
        assert_ne!(snapshot(&s.model.gen.params), g0);
        assert_eq!((s.adam_g.t, s.adam_d.t), (1, 1));
    }
}

#[test]
fn logged_totals_equal_weighted_components() {
    let mut config = rings_config(5);
    config.uda = true;
    config.weights = LossWeights {
        lambda: 0.7,
        beta: 0.3,
        gamma: 1.9,
    };
    let ds = config.dataset.build().unwrap();
    for variant in [LossVariant::Standard, LossVariant::LeastSquares] {
        let mut c = config.clone();
        c.variant = variant;
        let out = train(c.clone(), &ds, None).unwrap();
        assert_eq!(out.metrics.len(), 5);
        for m in &out.metrics {
            let w = c.weights;
            let d = m.gan_d + w.beta * m.reg_d + w.gamma * m.cls.unwrap();
            let g = m.gan_g + w.lambda * m.reg_g;
            assert!((m.loss_d - d).abs() <= 1e-12, "{} vs {d}", m.loss_d);
            assert!((m.loss_g - g).abs() <= 1e-12, "{} vs {g}", m.loss_g);
            assert!(m.reg_g >= 0.0 && m.reg_d >= 0.0);
            assert!(m.grad_norm_d > 0.0 && m.grad_norm_g > 0.0);
            assert!((0.0..=1.0).contains(&m.acc_src.unwrap()));
        }
    }
}

/// With λ = β = 0 and identical domains the step must be a plain
/// conditional GAN step, rebuilt here from the loss primitives alone.
#[test]
fn unregularized_step_matches_plain_conditional_gan() {
    let base = make_rings2d(200, Affine2::identity(), 4).unwrap();
    let x = base.samples(DomainVar::SOURCE).clone();
    let ds = DomainDataset::new("dup", [x.clone(), x], [None, None], None, 4).unwrap();
    let mut config = rings_config(3);
    config.weights = LossWeights::default().unregularized();
    let mut s = TrainState::new(config.clone(), &ds).unwrap();

    let mut gen = s.model.gen.clone();
    let mut disc = s.model.disc.clone();
    let adam = AdamConfig::with_lr(config.lr);
    let mut opt_g = AdamState::new(adam, &[&gen.params]);
    let mut opt_d = AdamState::new(adam, &[&disc.params]);
    let mut batches = s.batcher.clone();

    for _ in 0..3 {
        let b = batches.next_batch(&ds, config.batch_size, false).unwrap();

        let mut g = Graph::new();
        let gb = gen.params.bind(&mut g, false);
        let db = disc.params.bind(&mut g, true);
        let z = g.constant(b.z.clone());
        let mut terms = Vec::new();
        for d in DomainVar::BOTH {
            let fake = gen.forward(&mut g, &gb, z, d, Mode::Train).unwrap().image;
            let fake = g.detach(fake);
            let sf = disc.forward(&mut g, &db, fake, d).unwrap().score;
            let real = g.constant(b.reals[d.id()].clone());
            let sr = disc.forward(&mut g, &db, real, d).unwrap().score;
            terms.push(gan_d_loss(&mut g, config.variant, sr, sf).unwrap());
        }
        let sum = g.add(terms[0], terms[1]).unwrap();
        let loss = g.scale(sum, 0.5);
        let want_d = g.value(loss).item();
        let grads = db.collect(&g.backward(loss).unwrap());
        opt_d.step(&mut [&mut disc.params], &grads).unwrap();

        let mut g = Graph::new();
        let gb = gen.params.bind(&mut g, true);
        let db = disc.params.bind(&mut g, false);
        let z = g.constant(b.z.clone());
        let mut terms = Vec::new();
        for d in DomainVar::BOTH {
            let fake = gen.forward(&mut g, &gb, z, d, Mode::Train).unwrap().image;
            let sf = disc.forward(&mut g, &db, fake, d).unwrap().score;
            terms.push(gan_g_loss(&mut g, config.variant, sf).unwrap());
        }
        let sum = g.add(terms[0], terms[1]).unwrap();
        let loss = g.scale(sum, 0.5);
        let want_g = g.value(loss).item();
        let grads = gb.collect(&g.backward(loss).unwrap());
        opt_g.step(&mut [&mut gen.params], &grads).unwrap();

        let batch = s.next_batch(&ds).unwrap();
        assert_eq!(batch.z, b.z);
        let m = s.train_step(&batch).unwrap();
        let tol = |w: f64| 1e-12 * w.abs().max(1.0);
        assert!((m.loss_d - want_d).abs() <= tol(want_d), "D {} vs {want_d}", m.loss_d);
        assert!((m.loss_g - want_g).abs() <= tol(want_g), "G {} vs {want_g}", m.loss_g);
        // the regularizers are still measured, just not weighted in
        assert_eq!((m.loss_d, m.loss_g), (m.gan_d, m.gan_g));
    }
}

#[test]
fn same_config_gives_identical_metrics_files() {
    let config = glyph_config(4);
    let ds = config.dataset.build().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(config.clone(), &ds, Some(a.path())).unwrap();
    train(config, &ds, Some(b.path())).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let rows = read_metrics_csv(&a.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.cls.is_none() && r.acc_src.is_none()));
}

#[test]
fn resume_is_trajectory_exact() {
    for mut config in [glyph_config(6), rings_config(6)] {
        config.uda = true;
        config.checkpoint_every = 3;
        let ds = config.dataset.build().unwrap();
        let full_dir = tempfile::tempdir().unwrap();
        let full = train(config.clone(), &ds, Some(full_dir.path())).unwrap();
        let names: Vec<_> = full
            .checkpoints
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            [
                "checkpoint-000000.bin",
                "checkpoint-000003.bin",
                "checkpoint-000006.bin"
            ]
        );

        let mid = load_checkpoint(&full.checkpoints[1]).unwrap();
        assert_eq!(mid.iteration, 3);
        let resumed = continue_training(mid, &ds, None).unwrap();
        assert_eq!(resumed.state, full.state);
        assert_eq!(resumed.metrics[..], full.metrics[3..]);
        assert_eq!(
            checkpoint_bytes(&resumed.state).unwrap(),
            checkpoint_bytes(&full.state).unwrap()
        );

        let last = load_checkpoint(&full.checkpoints[2]).unwrap();
        assert_eq!(last, full.state);
    }
}

#[test]
fn zero_iterations_write_only_the_initial_checkpoint() {
    let config = glyph_config(0);
    let ds = config.dataset.build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = train(config.clone(), &ds, Some(dir.path())).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.checkpoints.len(), 1);
    let mut files: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["checkpoint-000000.bin", "metrics.csv"]);
    let s = load_checkpoint(&out.checkpoints[0]).unwrap();
    assert_eq!(s, TrainState::new(config, &ds).unwrap());
}

#[test]
fn divergence_aborts_with_last_checkpoint() {
    let mut config = rings_config(50);
    config.variant = LossVariant::LeastSquares;
    config.lr = 1e4;
    config.checkpoint_every = 1;
    let ds = config.dataset.build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    match train(config, &ds, Some(dir.path())) {
        Err(Error::Divergence {
            iteration,
            value,
            last_checkpoint: Some(p),
            ..
        }) => {
            assert!(!value.is_finite() || value.abs() > 1e6);
            assert!(p.exists());
            assert_eq!(load_checkpoint(&p).unwrap().iteration, iteration);
            let rows = read_metrics_csv(&dir.path().join("metrics.csv")).unwrap();
            assert_eq!(rows.len() as u64, iteration);
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics.len())),
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let config = rings_config(1);
    let ds = config.dataset.build().unwrap();
    let s = TrainState::new(config, &ds).unwrap();
    let bytes = checkpoint_bytes(&s).unwrap();
    assert_eq!(parse_checkpoint(&bytes).unwrap(), s);
    assert!(matches!(
        parse_checkpoint(&bytes[..bytes.len() - 1]),
        Err(Error::Checkpoint(_))
    ));
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(matches!(parse_checkpoint(&bad), Err(Error::Checkpoint(_))));
    let mut long = bytes;
    long.push(0);
    assert!(matches!(parse_checkpoint(&long), Err(Error::Checkpoint(_))));
}
