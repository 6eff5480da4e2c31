use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DomainDataset, GtTransform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of glyph families (class ids `0..4`).
pub const GLYPH_FAMILIES: usize = 4;

const EDGE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlyphTransform {
    Negative,
    Edge,
}

impl fmt::Display for GlyphTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlyphTransform::Negative => "negative",
            GlyphTransform::Edge => "edge",
        })
    }
}

impl FromStr for GlyphTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(GlyphTransform::Negative),
            "edge" => Ok(GlyphTransform::Edge),
            other => Err(Error::Config(format!("unknown glyph transform {other:?}"))),
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Draws one glyph of `family` at `res`×`res` in [−1, 1], with stroke
/// geometry jittered by `rng`. Strokes are anti-aliased over one pixel.
pub fn render_glyph(family: usize, res: usize, rng: &mut impl Rng) -> Vec<f64> {
    let thick = rng.random_range(0.10..0.18);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let dist: Box<dyn Fn((f64, f64)) -> f64> = match family % GLYPH_FAMILIES {
        0 => {
            let (x, lean) = (u(0.35, 0.65), u(-0.12, 0.12));
            let (y0, y1) = (u(0.12, 0.28), u(0.72, 0.88));
            Box::new(move |p| segment_distance(p, (x - lean, y0), (x + lean, y1)))
        }
        1 => {
            let (y, lean) = (u(0.35, 0.65), u(-0.12, 0.12));
            let (x0, x1) = (u(0.12, 0.28), u(0.72, 0.88));
            Box::new(move |p| segment_distance(p, (x0, y - lean), (x1, y + lean)))
        }
        2 => {
            let (cx, cy, r) = (u(0.42, 0.58), u(0.42, 0.58), u(0.22, 0.32));
            Box::new(move |p: (f64, f64)| (((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt() - r).abs())
        }
        _ => {
            let (cx, cy) = (u(0.4, 0.6), u(0.4, 0.6));
            let (arm_x, arm_y) = (u(0.22, 0.34), u(0.22, 0.34));
            Box::new(move |p| {
                let h = segment_distance(p, (cx - arm_x, cy), (cx + arm_x, cy));
                let v = segment_distance(p, (cx, cy - arm_y), (cx, cy + arm_y));
                h.min(v)
            })
        }
    };
    let px = 1.0 / res as f64;
    let mut out = Vec::with_capacity(res * res);
    for i in 0..res {
        for j in 0..res {
            let p = ((j as f64 + 0.5) * px, (i as f64 + 0.5) * px);
            let ink = (0.5 + (thick / 2.0 - dist(p)) / px).clamp(0.0, 1.0);
            out.push(2.0 * ink - 1.0);
        }
    }
    out
}

/// Binarized central-difference gradient magnitude of every channel plane:
/// +1 where the magnitude exceeds 0.5, −1 elsewhere. Borders replicate.
pub fn edge_transform(x: &Tensor) -> Result<Tensor> {
    let &[_, _, h, w] = x.dims() else {
        return Err(Error::InvalidShape(format!(
            "edge transform wants rank 4, got {}",
            x.shape()
        )));
    };
    let mut out = Vec::with_capacity(x.numel());
    for plane in x.data().chunks(h * w) {
        let at = |i: usize, j: usize| plane[i * w + j];
        for i in 0..h {
            for j in 0..w {
                let gx = (at(i, (j + 1).min(w - 1)) - at(i, j.saturating_sub(1))) / 2.0;
                let gy = (at((i + 1).min(h - 1), j) - at(i.saturating_sub(1), j)) / 2.0;
                let edge = (gx * gx + gy * gy).sqrt() > EDGE_THRESHOLD;
                out.push(if edge { 1.0 } else { -1.0 });
            }
        }
    }
    Tensor::new(x.dims(), out)
}

/// Procedural glyphs in domain 0 and their transformed copies in domain 1,
/// balanced over the four families, each domain shuffled on its own.
pub fn make_glyph_pairs(n: usize, resolution: usize, transform: GlyphTransform, seed: u64) -> Result<DomainDataset> {
    if !matches!(resolution, 8 | 16) {
        return Err(Error::Unsupported(format!(
            "glyph resolution {resolution} (expected 8 or 16)"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidShape("glyph dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % GLYPH_FAMILIES).collect();
    let data = labels
        .iter()
        .flat_map(|&f| render_glyph(f, resolution, &mut rng))
        .collect();
    let d0 = Tensor::new(&[n, 1, resolution, resolution], data)?;
    let gt = match transform {
        GlyphTransform::Negative => GtTransform::Negative,
        GlyphTransform::Edge => GtTransform::Edge,
    };
    let d1 = gt.apply(&d0)?;
    DomainDataset::new(
        format!("glyphs-{transform}-{resolution}"),
        [d0, d1],
        [Some(labels.clone()), Some(labels)],
        Some(gt),
        seed,
    )
}
