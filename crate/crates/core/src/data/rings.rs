use std::f64::consts::TAU;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DomainDataset, GtTransform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RING_CLASSES: usize = 4;
/// Gaussian jitter added to every ring point.
pub const RING_NOISE: f64 = 0.05;
/// Class priors of the four quarter-circle sectors. Unequal so that the
/// ring has no rotational symmetry and the cross-domain map is identifiable.
pub const RING_PRIORS: [f64; RING_CLASSES] = [0.4, 0.3, 0.2, 0.1];

/// x ↦ s·R(θ)·x + t on 2-D points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2 {
    pub scale: f64,
    /// Radians.
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Affine2 {
            scale: 1.0,
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn map_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        [
            self.scale * (c * p[0] - s * p[1]) + self.translation[0],
            self.scale * (s * p[0] + c * p[1]) + self.translation[1],
        ]
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().rank() != 2 || x.dims()[1] != 2 {
            return Err(Error::InvalidShape(format!(
                "affine map wants n×2 points, got {}",
                x.shape()
            )));
        }
        let data = x.data().chunks(2).flat_map(|p| self.map_point([p[0], p[1]])).collect();
        Tensor::new(x.dims(), data)
    }
}

/// Noisy unit-circle points in four angular sectors (domain 0) and the
/// affine image of the same clean points with fresh noise (domain 1).
pub fn make_rings2d(n: usize, affine: Affine2, seed: u64) -> Result<DomainDataset> {
    if !(affine.scale > 0.0 && affine.scale.is_finite()) {
        return Err(Error::Config(format!("ring scale must be > 0, got {}", affine.scale)));
    }
    if n == 0 {
        return Err(Error::InvalidShape("rings dataset needs n >= 1".into()));
    }
    let (d0, d1, labels) = construction_order(n, affine, seed)?;
    DomainDataset::new(
        "rings2d",
        [d0, d1],
        [Some(labels.clone()), Some(labels)],
        Some(GtTransform::Affine(affine)),
        seed,
    )
}

/// Unshuffled samples: row `i` of both domains comes from the same clean point.
pub(crate) fn construction_order(n: usize, affine: Affine2, seed: u64) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = WeightedIndex::new(RING_PRIORS).expect("static priors are valid");
    let noise = Normal::new(0.0, RING_NOISE).expect("static sigma is valid");
    let mut labels = Vec::with_capacity(n);
    let (mut d0, mut d1) = (Vec::with_capacity(2 * n), Vec::with_capacity(2 * n));
    for _ in 0..n {
        let k = classes.sample(&mut rng);
        let angle = (k as f64 + rng.random::<f64>()) * TAU / RING_CLASSES as f64;
        let (s, c) = angle.sin_cos();
        d0.extend([c + noise.sample(&mut rng), s + noise.sample(&mut rng)]);
        let q = [c + noise.sample(&mut rng), s + noise.sample(&mut rng)];
        d1.extend(affine.map_point(q));
        labels.push(k);
    }
    Ok((Tensor::new(&[n, 2], d0)?, Tensor::new(&[n, 2], d1)?, labels))
}
