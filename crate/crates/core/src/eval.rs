//! Correspondence error against a known cross-domain transform, domain
//! adaptation accuracy, regularizer ablations, latent interpolation and
//! PGM grids.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DomainDataset, GtTransform, LatentSampler};
use crate::error::{Error, Result};
use crate::nn::{ClassifierHead, DiscriminatorNet, DomainVar, GeneratorNet, Mode, DISC_FEATURES};
use crate::tensor::{Graph, Tensor};
use crate::trainer::{argmax, train, Model, StepMetrics, TestSet, TrainConfig};

/// Rows per forward pass during evaluation. Results do not depend on it.
pub const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceReport {
    pub mean_error: f64,
    pub per_sample_errors: Vec<f64>,
    /// Same statistic after pairing each source output with the target
    /// output of a different latent.
    pub baseline_error: f64,
    pub n: usize,
}

/// The dataset's ground-truth domain-0 → domain-1 map, if it has one.
pub fn ground_truth(ds: &DomainDataset) -> Option<&GtTransform> {
    ds.gt_transform()
}

/// Renders `z` under domain `d` in eval mode, `chunk` rows at a time.
pub fn render(gen: &GeneratorNet, z: &Tensor, d: DomainVar, chunk: usize) -> Result<Tensor> {
    let n = z.dims()[0];
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let mut g = Graph::new();
        let b = gen.params.bind(&mut g, false);
        let zv = g.constant(z.slice_batch(start, end)?);
        let out = gen.forward(&mut g, &b, zv, d, Mode::Eval)?;
        parts.push(g.value(out.image).clone());
        start = end;
    }
    concat_rows(&parts)
}

fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::InvalidShape("no rows".into()))?;
    let mut dims = first.dims().to_vec();
    dims[0] = parts.iter().map(|p| p.dims()[0]).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(&dims, data)
}

fn row_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// A permutation of `0..n` with no fixed points when `n ≥ 2`.
fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut perm = vec![0; n];
    for i in 0..n {
        perm[order[i]] = order[(i + 1) % n];
    }
    perm
}

/// Scores generated pairs `(G(z|0), G(z|1))` for `n` latents drawn with
/// `seed` against the ground-truth transform.
pub fn correspondence_score(
    gen: &GeneratorNet,
    gt: Option<&GtTransform>,
    n: usize,
    seed: u64,
) -> Result<CorrespondenceReport> {
    correspondence_score_chunked(gen, gt, n, seed, EVAL_CHUNK)
}

pub fn correspondence_score_chunked(
    gen: &GeneratorNet,
    gt: Option<&GtTransform>,
    n: usize,
    seed: u64,
    chunk: usize,
) -> Result<CorrespondenceReport> {
    let gt = gt.ok_or(Error::MissingTransform)?;
    if n == 0 {
        return Err(Error::InvalidShape("correspondence over zero samples".into()));
    }
    let z = LatentSampler::new(gen.latent_dim(), seed).sample(n)?;
    let x0 = render(gen, &z, DomainVar::SOURCE, chunk)?;
    let x1 = render(gen, &z, DomainVar::TARGET, chunk)?;
    correspondence_of(&gt.apply(&x0)?, &x1, seed)
}

/// Paired and permuted errors between mapped source outputs and target
/// outputs, row by row.
pub fn correspondence_of(mapped: &Tensor, target: &Tensor, seed: u64) -> Result<CorrespondenceReport> {
    if mapped.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "correspondence",
            left: mapped.shape().clone(),
            right: target.shape().clone(),
        });
    }
    let n = mapped.dims()[0];
    let k = mapped.numel() / n;
    let rows = |t: &Tensor, i: usize| -> Vec<f64> { t.data()[i * k..(i + 1) * k].to_vec() };
    let per: Vec<f64> = (0..n).map(|i| row_mse(&rows(mapped, i), &rows(target, i))).collect();
    let perm = derangement(n, seed);
    let base: f64 = (0..n)
        .map(|i| row_mse(&rows(mapped, i), &rows(target, perm[i])))
        .sum::<f64>()
        / n as f64;
    Ok(CorrespondenceReport {
        mean_error: per.iter().sum::<f64>() / n as f64,
        per_sample_errors: per,
        baseline_error: base,
        n,
    })
}

/// Fraction of samples whose classifier argmax on `D_hi(x | d)` matches.
pub fn uda_accuracy(
    disc: &DiscriminatorNet,
    cls: &ClassifierHead,
    samples: &Tensor,
    labels: &[usize],
    d: DomainVar,
) -> Result<f64> {
    let n = samples.dims()[0];
    if labels.len() != n || n == 0 {
        return Err(Error::IdxCountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let mut hits = 0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let mut g = Graph::new();
        let mut b = disc.params.bind(&mut g, false);
        b.extend(cls.params.bind(&mut g, false));
        let x = g.constant(samples.slice_batch(start, end)?);
        let f = disc.forward(&mut g, &b, x, d)?.taps.require(DISC_FEATURES)?;
        let logits = cls.classify(&mut g, &b, f)?;
        let k = cls.classes();
        hits += g
            .value(logits)
            .data()
            .chunks(k)
            .zip(&labels[start..end])
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        start = end;
    }
    Ok(hits as f64 / n as f64)
}

/// Target-domain accuracy on the training samples and on a held-out set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UdaReport {
    pub acc_sampled: f64,
    pub acc_test: f64,
}

pub fn uda_report(model: &Model, ds: &DomainDataset, test: &TestSet) -> Result<UdaReport> {
    let cls = model
        .cls
        .as_ref()
        .ok_or_else(|| Error::ModelMismatch("model has no classifier".into()))?;
    let labels = ds
        .labels(DomainVar::TARGET)
        .ok_or_else(|| Error::ModelMismatch(format!("dataset {} has no target labels", ds.name)))?;
    let t = DomainVar::TARGET;
    Ok(UdaReport {
        acc_sampled: uda_accuracy(&model.disc, cls, ds.samples(t), labels, t)?,
        acc_test: uda_accuracy(&model.disc, cls, &test.samples, &test.labels, t)?,
    })
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for n = 1).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// A regularized run next to its λ = β = 0 twin.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub regularized: CorrespondenceReport,
    pub unregularized: CorrespondenceReport,
    /// First-iteration metrics of both runs.
    pub first_steps: Option<(StepMetrics, StepMetrics)>,
}

/// Trains `config` and its unregularized twin with identical seeds and
/// scores both on the same latents.
pub fn ablation_compare(config: &TrainConfig, ds: &DomainDataset, n: usize, seed: u64) -> Result<AblationReport> {
    let mut plain = config.clone();
    plain.weights = config.weights.unregularized();
    let a = train(config.clone(), ds, None)?;
    let b = train(plain, ds, None)?;
    let gt = ground_truth(ds);
    Ok(AblationReport {
        regularized: correspondence_score(&a.state.model.gen, gt, n, seed)?,
        unregularized: correspondence_score(&b.state.model.gen, gt, n, seed)?,
        first_steps: a.metrics.first().cloned().zip(b.metrics.first().cloned()),
    })
}

pub const ABLATION_HEADER: &str = "run,n,mean_error,baseline_error,per_sample_errors";

impl AblationReport {
    /// One row per run; per-sample errors are `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{ABLATION_HEADER}\n");
        for (name, r) in [
            ("regularized", &self.regularized),
            ("unregularized", &self.unregularized),
        ] {
            let per: Vec<String> = r.per_sample_errors.iter().map(f64::to_string).collect();
            let _ = writeln!(
                s,
                "{name},{},{},{},{}",
                r.n,
                r.mean_error,
                r.baseline_error,
                per.join(";")
            );
        }
        s
    }

    /// Inverse of [`AblationReport::to_csv`]; first-step metrics are not
    /// part of the CSV.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(ABLATION_HEADER) {
            return Err(Error::Config("ablation CSV header mismatch".into()));
        }
        let bad = |l: &str| Error::Config(format!("bad ablation line: {l}"));
        let mut parse = |want: &str| -> Result<CorrespondenceReport> {
            let l = lines
                .next()
                .ok_or_else(|| Error::Config(format!("missing {want} row")))?;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 || f[0] != want {
                return Err(bad(l));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(l));
            let per = if f[4].is_empty() {
                Vec::new()
            } else {
                f[4].split(';').map(num).collect::<Result<Vec<f64>>>()?
            };
            Ok(CorrespondenceReport {
                n: f[1].parse().map_err(|_| bad(l))?,
                mean_error: num(f[2])?,
                baseline_error: num(f[3])?,
                per_sample_errors: per,
            })
        };
        let regularized = parse("regularized")?;
        let unregularized = parse("unregularized")?;
        Ok(AblationReport {
            regularized,
            unregularized,
            first_steps: None,
        })
    }
}

/// `steps` evenly spaced latents from `z_a` to `z_b`, each rendered under
/// both domains. Entry `i` holds `[G(z_t|0), G(z_t|1)]`.
pub fn interpolate(gen: &GeneratorNet, z_a: &[f64], z_b: &[f64], steps: usize) -> Result<Vec<[Tensor; 2]>> {
    if steps < 2 {
        return Err(Error::InvalidShape(format!(
            "interpolation needs at least 2 steps, got {steps}"
        )));
    }
    let dim = gen.latent_dim();
    if z_a.len() != dim || z_b.len() != dim {
        return Err(Error::InvalidShape(format!("latents must have {dim} entries")));
    }
    let mut data = Vec::with_capacity(steps * dim);
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        data.extend(z_a.iter().zip(z_b).map(|(a, b)| (1.0 - t) * a + t * b));
    }
    let z = Tensor::new(&[steps, dim], data)?;
    let x0 = render(gen, &z, DomainVar::SOURCE, EVAL_CHUNK)?;
    let x1 = render(gen, &z, DomainVar::TARGET, EVAL_CHUNK)?;
    (0..steps)
        .map(|i| Ok([x0.slice_batch(i, i + 1)?, x1.slice_batch(i, i + 1)?]))
        .collect()
}

/// Maps [−1, 1] to a byte.
pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Binary PGM of `images` (`n × 1 × h × w`) tiled `cols` per row. Cells
/// past the last image are black.
pub fn grid_pgm(images: &Tensor, cols: usize) -> Result<Vec<u8>> {
    let &[n, c, h, w] = images.dims() else {
        return Err(Error::InvalidShape(format!(
            "grid wants rank 4, got {}",
            images.shape()
        )));
    };
    if c != 1 || cols == 0 || n == 0 {
        return Err(Error::InvalidShape(format!(
            "grid of {n} images, {c} channels, {cols} columns"
        )));
    }
    let rows = n.div_ceil(cols);
    let (height, width) = (rows * h, cols * w);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let mut pixels = vec![0u8; height * width];
    for (k, img) in images.data().chunks(h * w).enumerate() {
        let (r, col) = (k / cols, k % cols);
        for i in 0..h {
            for j in 0..w {
                pixels[(r * h + i) * width + col * w + j] = to_byte(img[i * w + j]);
            }
        }
    }
    out.extend(pixels);
    Ok(out)
}

pub fn write_grid(images: &Tensor, cols: usize, path: &Path) -> Result<()> {
    std::fs::write(path, grid_pgm(images, cols)?)?;
    Ok(())
}

/// Orders two equally sized batches so that a `cols`-wide grid shows each
/// row of source images directly above its target counterparts.
pub fn interleave_pairs(a: &Tensor, b: &Tensor, cols: usize) -> Result<Tensor> {
    if a.shape() != b.shape() || cols == 0 {
        return Err(Error::ShapeMismatch {
            op: "interleave_pairs",
            left: a.shape().clone(),
            right: b.shape().clone(),
        });
    }
    let n = a.dims()[0];
    let per = a.numel() / n.max(1);
    let blank = vec![-1.0; per];
    let mut data = Vec::new();
    for start in (0..n).step_by(cols) {
        for src in [a, b] {
            for k in start..start + cols {
                data.extend_from_slice(if k < n {
                    &src.data()[k * per..(k + 1) * per]
                } else {
                    &blank
                });
            }
        }
    }
    let mut dims = a.dims().to_vec();
    dims[0] = data.len() / per;
    Tensor::new(&dims, data)
}

/// Renders `n` latent pairs drawn with `seed` into a pair grid.
pub fn write_pair_grid(model: &Model, path: &Path, n: usize, seed: u64) -> Result<()> {
    let z = LatentSampler::new(model.gen.latent_dim(), seed).sample(n)?;
    let a = render(&model.gen, &z, DomainVar::SOURCE, EVAL_CHUNK)?;
    let b = render(&model.gen, &z, DomainVar::TARGET, EVAL_CHUNK)?;
    if a.dims().len() != 4 {
        return Err(Error::Unsupported("pair grids need image samples".into()));
    }
    write_grid(&interleave_pairs(&a, &b, n)?, n, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derangement_has_no_fixed_points() {
        for n in 2..20 {
            let p = derangement(n, n as u64);
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
        }
        assert_eq!(derangement(1, 0), vec![0]);
    }

    #[test]
    fn pgm_endpoints_and_layout() {
        let lo = Tensor::full(&[1, 1, 2, 3], -1.0).unwrap();
        let bytes = grid_pgm(&lo, 1).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert!(bytes[11..].iter().all(|&b| b == 0));
        let hi = Tensor::full(&[1, 1, 2, 3], 1.0).unwrap();
        assert!(grid_pgm(&hi, 1).unwrap()[11..].iter().all(|&b| b == 255));
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(5.0), 255);
    }

    #[test]
    fn interleave_places_pairs_in_adjacent_rows() {
        let a = Tensor::new(&[3, 1, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(&[3, 1, 1, 1], vec![-1.0, -2.0, -3.0]).unwrap();
        let t = interleave_pairs(&a, &b, 2).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, -1.0, -2.0, 3.0, -1.0, -3.0, -1.0]);
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
