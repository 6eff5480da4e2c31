mod common;

use common::*;
use proptest::prelude::*;
use regcgan::data::*;
use regcgan::nn::DomainVar;
use regcgan::tensor::Tensor;
use regcgan::Error;

const S: DomainVar = DomainVar::SOURCE;
const T: DomainVar = DomainVar::TARGET;

fn sorted_rows(t: &Tensor) -> Vec<Vec<u64>> {
    let n = t.dims()[0];
    let mut rows: Vec<Vec<u64>> = t
        .data()
        .chunks(t.numel() / n)
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows
}

/// Independent edge operator: central differences with clamped borders.
fn oracle_edge(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let px = |i: isize, j: isize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        plane[i * w + j]
    };
    let mut out = Vec::new();
    for i in 0..h as isize {
        for j in 0..w as isize {
            let gx = 0.5 * (px(i, j + 1) - px(i, j - 1));
            let gy = 0.5 * (px(i + 1, j) - px(i - 1, j));
            out.push(if gx.hypot(gy) > 0.5 { 1.0 } else { -1.0 });
        }
    }
    out
}

#[test]
fn glyph_domains_are_transforms_of_each_other_up_to_order() {
    for res in [8, 16] {
        let ds = make_glyph_pairs(200, res, GlyphTransform::Negative, 4).unwrap();
        let neg = ds.samples(S).map(|v| -v);
        assert_eq!(sorted_rows(&neg), sorted_rows(ds.samples(T)));
        // but not in the same order
        assert_ne!(&neg, ds.samples(T));
        assert!(ds.in_unit_range());
        assert_eq!(ds.sample_dims(), &[1, res, res]);
        assert_eq!(ds.num_classes(), Some(GLYPH_FAMILIES));

        let ds = make_glyph_pairs(200, res, GlyphTransform::Edge, 4).unwrap();
        let src = ds.samples(S);
        let edges: Vec<f64> = src
            .data()
            .chunks(res * res)
            .flat_map(|p| oracle_edge(p, res, res))
            .collect();
        let edges = Tensor::new(src.dims(), edges).unwrap();
        assert_eq!(sorted_rows(&edges), sorted_rows(ds.samples(T)));
        assert!(ds.in_unit_range());
    }
}

#[test]
fn glyph_classes_are_balanced_and_construction_is_pure() {
    let a = make_glyph_pairs(101, 16, GlyphTransform::Edge, 9).unwrap();
    let b = make_glyph_pairs(101, 16, GlyphTransform::Edge, 9).unwrap();
    for d in DomainVar::BOTH {
        assert_eq!(a.samples(d), b.samples(d));
        assert_eq!(a.labels(d), b.labels(d));
        let mut counts = [0; GLYPH_FAMILIES];
        a.labels(d).unwrap().iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [26, 25, 25, 25]);
    }
    let c = make_glyph_pairs(101, 16, GlyphTransform::Edge, 10).unwrap();
    assert_ne!(a.samples(S), c.samples(S));
}

#[test]
fn edge_output_is_binary_and_stable_under_rethresholding() {
    let ds = make_glyph_pairs(64, 16, GlyphTransform::Edge, 1).unwrap();
    let e = ds.samples(T);
    assert!(e.data().iter().all(|&v| v == -1.0 || v == 1.0));
    let rethreshold = e.map(|v| if v > 0.5 { 1.0 } else { -1.0 });
    assert_eq!(&rethreshold, e);
    let mut r = rng(2);
    for _ in 0..20 {
        let x = random_tensor(&mut r, &[1, 1, 8, 8]);
        assert_eq!(
            edge_transform(&x).unwrap().data(),
            oracle_edge(x.data(), 8, 8).as_slice()
        );
    }
}

fn radii(t: &Tensor) -> Vec<f64> {
    t.data().chunks(2).map(|p| p[0].hypot(p[1])).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn rings_examples() {
    let ds = make_rings2d(4000, Affine2::identity(), 3).unwrap();
    let (r0, r1) = (radii(ds.samples(S)), radii(ds.samples(T)));
    assert!((mean(&r0) - mean(&r1)).abs() < 0.01);
    assert!((mean(&r0) - 1.0).abs() < 0.01);
    let quad = |t: &Tensor| {
        let mut c = [0usize; 4];
        for p in t.data().chunks(2) {
            let a = p[1].atan2(p[0]).rem_euclid(std::f64::consts::TAU);
            c[((a / std::f64::consts::FRAC_PI_2) as usize).min(3)] += 1;
        }
        c.map(|k| k as f64 / 4000.0)
    };
    let (q0, q1) = (quad(ds.samples(S)), quad(ds.samples(T)));
    for k in 0..4 {
        assert!((q0[k] - q1[k]).abs() < 0.04);
        assert!((q0[k] - RING_PRIORS[k]).abs() < 0.04);
    }

    let two = Affine2 {
        scale: 2.0,
        ..Affine2::identity()
    };
    let ds = make_rings2d(2000, two, 3).unwrap();
    let r1 = radii(ds.samples(T));
    assert!((mean(&r1) - 2.0).abs() < 0.02);
    let sd = (r1.iter().map(|r| (r - 2.0).powi(2)).sum::<f64>() / r1.len() as f64).sqrt();
    assert!(sd < 3.0 * 2.0 * RING_NOISE);
    // labels follow the sector of the clean point
    for (p, &l) in ds.samples(S).data().chunks(2).zip(ds.labels(S).unwrap()) {
        let a = p[1].atan2(p[0]).rem_euclid(std::f64::consts::TAU);
        let sector = (a / std::f64::consts::FRAC_PI_2) as usize;
        assert!(sector == l || (p[0].abs() < 0.2 || p[1].abs() < 0.2), "{p:?} {l}");
    }
}

#[test]
fn idx_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = vec![0u8, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 5, 0, 0, 0, 5];
    bytes.extend((0..75u32).map(|i| (i * 37 % 256) as u8));
    let labels = vec![0u8, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    std::fs::write(&ip, &bytes).unwrap();
    std::fs::write(&lp, &labels).unwrap();
    let (x, y) = load_idx(&ip, &lp).unwrap();
    assert_eq!(x.dims(), &[3, 1, 5, 5]);
    assert_eq!(y, vec![7, 0, 9]);
    assert_eq!(idx_image_bytes(&x).unwrap(), bytes);
    assert_eq!(idx_label_bytes(&y).unwrap(), labels);
    assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));

    std::fs::write(&lp, [0u8, 0, 8, 1, 0, 0, 0, 2, 1, 2]).unwrap();
    assert!(matches!(
        load_idx(&ip, &lp),
        Err(Error::IdxCountMismatch { images: 3, labels: 2 })
    ));
    std::fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::IdxTruncated { .. })));
    std::fs::write(&ip, &labels).unwrap();
    assert!(matches!(
        load_idx(&ip, &lp),
        Err(Error::IdxBadMagic {
            expected: 0x803,
            found: 0x801
        })
    ));
    assert!(matches!(load_idx(dir.path().join("missing"), &lp), Err(Error::Io(_))));
}

#[test]
fn downsampling_keeps_value_support() {
    let mut r = rng(8);
    let x = random_tensor(&mut r, &[2, 1, 28, 28]).map(|v| (v * 4.0).round() / 4.0);
    let y = resize_nearest(&x, 14).unwrap();
    assert_eq!(y.dims(), &[2, 1, 14, 14]);
    for v in y.data() {
        assert!(x.data().contains(v));
    }
    assert_eq!(y.data()[0], x.data()[0]);
    assert_eq!(y.data()[1], x.data()[2]);
    assert_eq!(y.data()[14], x.data()[2 * 28]);
}

#[test]
fn batches_share_latent_and_draw_domains_independently() {
    let ds = make_glyph_pairs(64, 8, GlyphTransform::Negative, 2).unwrap();
    let mut b = Batcher::new(&ds, 16, 5);
    let batch = b.next_batch(&ds, 16, false).unwrap();
    assert_eq!(batch.z.dims(), &[16, 16]);
    assert_eq!(batch.reals[0].dims(), &[16, 1, 8, 8]);
    assert!(batch.labels_d0.is_none());
    assert!(batch.z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let uda = b.next_batch(&ds, 16, true).unwrap();
    let want: Vec<usize> = uda.indices[0].iter().map(|&i| ds.labels(S).unwrap()[i]).collect();
    assert_eq!(uda.labels_d0.unwrap(), want);

    // one epoch visits each sample once per domain
    let mut b = Batcher::new(&ds, 4, 6);
    let (mut seen0, mut seen1) = (Vec::new(), Vec::new());
    for _ in 0..4 {
        let batch = b.next_batch(&ds, 16, false).unwrap();
        seen0.extend(batch.indices[0].clone());
        seen1.extend(batch.indices[1].clone());
    }
    seen0.sort();
    seen1.sort();
    assert_eq!(seen0, (0..64).collect::<Vec<_>>());
    assert_eq!(seen1, (0..64).collect::<Vec<_>>());
    assert!(b.next_batch(&ds, 0, false).is_err());
}

#[test]
fn co_batched_indices_are_uncorrelated() {
    let ds = make_rings2d(200, Affine2::identity(), 1).unwrap();
    let mut b = Batcher::new(&ds, 2, 11);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        let batch = b.next_batch(&ds, 50, false).unwrap();
        xs.extend(batch.indices[0].iter().map(|&i| i as f64));
        ys.extend(batch.indices[1].iter().map(|&i| i as f64));
    }
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>().sqrt();
    let r = cov / (sx * sy);
    // null sd is 1/√N with N = 10⁴
    assert!(r.abs() < 4.0 / (xs.len() as f64).sqrt(), "r = {r}");
}

#[test]
fn subset_sampling_is_uniform_without_replacement() {
    let x = Tensor::new(&[100, 1], (0..100).map(|i| i as f64).collect()).unwrap();
    let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let (s, l) = sample_subset(&x, &labels, 30, 4).unwrap();
    let mut v: Vec<usize> = s.data().iter().map(|&f| f as usize).collect();
    assert!(v.iter().zip(&l).all(|(&i, &li)| i % 10 == li));
    v.sort();
    v.dedup();
    assert_eq!(v.len(), 30);
    assert!(sample_subset(&x, &labels, 101, 4).is_err());
}

proptest! {
    #[test]
    fn negative_is_an_involution(v in prop::collection::vec(-1.0f64..=1.0, 64)) {
        let x = Tensor::new(&[1, 1, 8, 8], v).unwrap();
        let once = GtTransform::Negative.apply(&x).unwrap();
        prop_assert_eq!(GtTransform::Negative.apply(&once).unwrap(), x);
    }

    #[test]
    fn resize_to_same_size_is_identity(v in prop::collection::vec(-1.0f64..=1.0, 2 * 36)) {
        let x = Tensor::new(&[2, 1, 6, 6], v).unwrap();
        prop_assert_eq!(resize_nearest(&x, 6).unwrap(), x);
    }
}
