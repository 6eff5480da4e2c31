//! Two-domain datasets, latent sampling and paired mini-batches.

mod batch;
mod glyphs;
mod idx;
mod rings;

pub use batch::{Batcher, LatentSampler, PairedBatch, RngState, ShuffledCursor};
pub use glyphs::{edge_transform, make_glyph_pairs, render_glyph, GlyphTransform, GLYPH_FAMILIES};
pub use idx::{idx_image_bytes, idx_label_bytes, load_idx, parse_idx_images, parse_idx_labels};
pub use rings::{make_rings2d, Affine2, RING_CLASSES, RING_NOISE, RING_PRIORS};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::DomainVar;
use crate::tensor::Tensor;

/// Deterministic map from domain-0 sample space to domain-1 sample space.
#[derive(Clone, Debug, PartialEq)]
pub enum GtTransform {
    Negative,
    Edge,
    Affine(Affine2),
}

impl GtTransform {
    /// Applies the map to a batch of domain-0 samples.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            GtTransform::Negative => Ok(x.map(|v| -v)),
            GtTransform::Edge => edge_transform(x),
            GtTransform::Affine(a) => a.apply(x),
        }
    }
}

/// Per-domain samples plus optional labels. Each domain is stored in its
/// own independently shuffled order, so equal indices carry no pairing.
#[derive(Clone, Debug)]
pub struct DomainDataset {
    pub name: String,
    domains: [Tensor; 2],
    labels: [Option<Vec<usize>>; 2],
    gt: Option<GtTransform>,
}

impl DomainDataset {
    /// Builds a dataset from construction-order samples, shuffling each
    /// domain with its own stream derived from `seed`.
    pub fn new(
        name: impl Into<String>,
        domains: [Tensor; 2],
        labels: [Option<Vec<usize>>; 2],
        gt: Option<GtTransform>,
        seed: u64,
    ) -> Result<Self> {
        let [d0, d1] = domains;
        let [l0, l1] = labels;
        if d0.dims()[1..] != d1.dims()[1..] {
            return Err(Error::ShapeMismatch {
                op: "DomainDataset::new",
                left: d0.shape().clone(),
                right: d1.shape().clone(),
            });
        }
        let (d0, l0) = shuffled(d0, l0, seed, 0)?;
        let (d1, l1) = shuffled(d1, l1, seed, 1)?;
        Ok(DomainDataset {
            name: name.into(),
            domains: [d0, d1],
            labels: [l0, l1],
            gt,
        })
    }

    pub fn samples(&self, d: DomainVar) -> &Tensor {
        &self.domains[d.id()]
    }

    pub fn labels(&self, d: DomainVar) -> Option<&[usize]> {
        self.labels[d.id()].as_deref()
    }

    pub fn len(&self, d: DomainVar) -> usize {
        self.domains[d.id()].dims()[0]
    }

    /// Per-sample dims, e.g. `[1, 16, 16]` or `[2]`.
    pub fn sample_dims(&self) -> &[usize] {
        &self.domains[0].dims()[1..]
    }

    pub fn num_classes(&self) -> Option<usize> {
        let max = self.labels.iter().flatten().flatten().max()?;
        Some(max + 1)
    }

    pub fn gt_transform(&self) -> Option<&GtTransform> {
        self.gt.as_ref()
    }

    /// Whether every sample of both domains lies in [−1, 1].
    pub fn in_unit_range(&self) -> bool {
        self.domains
            .iter()
            .all(|t| t.data().iter().all(|v| (-1.0..=1.0).contains(v)))
    }
}

fn shuffled(x: Tensor, labels: Option<Vec<usize>>, seed: u64, stream: u64) -> Result<(Tensor, Option<Vec<usize>>)> {
    let n = x.dims()[0];
    if let Some(l) = &labels {
        if l.len() != n {
            return Err(Error::IdxCountMismatch {
                images: n,
                labels: l.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100 + stream);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let x = x.select_batch(&order)?;
    let labels = labels.map(|l| order.iter().map(|&i| l[i]).collect());
    Ok((x, labels))
}

/// Nearest-neighbour resampling of square rank-4 samples.
pub fn resize_nearest(x: &Tensor, target: usize) -> Result<Tensor> {
    let &[n, c, h, w] = x.dims() else {
        return Err(Error::InvalidShape(format!(
            "resize_nearest wants rank 4, got {}",
            x.shape()
        )));
    };
    if h != w || target == 0 {
        return Err(Error::InvalidShape(format!("resize_nearest {h}×{w} to {target}")));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * target * target);
    for plane in src.chunks(h * w) {
        for i in 0..target {
            let si = i * h / target;
            for j in 0..target {
                out.push(plane[si * w + j * w / target]);
            }
        }
    }
    Tensor::new(&[n, c, target, target], out)
}

/// `n` distinct indices from `0..total`, uniformly at random.
pub fn subset_indices(total: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > total {
        return Err(Error::InvalidShape(format!("subset of {n} from {total} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, total, n).into_vec())
}

/// Uniformly samples `n` rows (without replacement) with their labels.
pub fn sample_subset(x: &Tensor, labels: &[usize], n: usize, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    if labels.len() != x.dims()[0] {
        return Err(Error::IdxCountMismatch {
            images: x.dims()[0],
            labels: labels.len(),
        });
    }
    let picked = subset_indices(x.dims()[0], n, seed)?;
    Ok((x.select_batch(&picked)?, picked.iter().map(|&i| labels[i]).collect()))
}
