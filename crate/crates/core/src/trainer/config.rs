use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{
    load_idx, make_glyph_pairs, make_rings2d, resize_nearest, sample_subset, subset_indices, Affine2, DomainDataset,
    GlyphTransform,
};
use crate::error::{Error, Result};
use crate::nn::DomainVar;
use crate::objectives::{LossVariant, LossWeights};
use crate::tensor::Tensor;

/// Rings with an affine second domain; rotation kept in degrees so the
/// config text round-trips exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct RingsSpec {
    pub n: usize,
    pub scale: f64,
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub seed: u64,
}

impl RingsSpec {
    pub fn affine(&self) -> Affine2 {
        Affine2 {
            scale: self.scale,
            rotation: self.rotation_deg.to_radians(),
            translation: self.translation,
        }
    }
}

/// IDX digit files for a source and a target domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitsSpec {
    pub source_images: PathBuf,
    pub source_labels: PathBuf,
    pub target_images: PathBuf,
    pub target_labels: PathBuf,
    pub resolution: usize,
    pub source_n: usize,
    pub target_n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Glyphs {
        n: usize,
        resolution: usize,
        transform: GlyphTransform,
        seed: u64,
    },
    Rings(RingsSpec),
    Digits(DigitsSpec),
}

/// Held-out target-domain samples with labels.
pub struct TestSet {
    pub samples: Tensor,
    pub labels: Vec<usize>,
}

impl DatasetSpec {
    pub fn build(&self) -> Result<DomainDataset> {
        match self {
            DatasetSpec::Glyphs {
                n,
                resolution,
                transform,
                seed,
            } => make_glyph_pairs(*n, *resolution, *transform, *seed),
            DatasetSpec::Rings(r) => make_rings2d(r.n, r.affine(), r.seed),
            DatasetSpec::Digits(d) => {
                let (x0, l0) = d.load(DomainVar::SOURCE)?;
                let (x1, l1) = d.load(DomainVar::TARGET)?;
                let (x0, l0) = sample_subset(&x0, &l0, d.source_n, d.seed)?;
                let (x1, l1) = sample_subset(&x1, &l1, d.target_n, d.seed.wrapping_add(1))?;
                DomainDataset::new("digits", [x0, x1], [Some(l0), Some(l1)], None, d.seed)
            }
        }
    }

    /// The same dataset with its sampling seed advanced by `offset`.
    pub fn reseeded(&self, offset: u64) -> DatasetSpec {
        let mut d = self.clone();
        match &mut d {
            DatasetSpec::Glyphs { seed, .. } => *seed = seed.wrapping_add(offset),
            DatasetSpec::Rings(r) => r.seed = r.seed.wrapping_add(offset),
            DatasetSpec::Digits(x) => x.seed = x.seed.wrapping_add(offset),
        }
        d
    }

    /// Target-domain samples never seen in training: a fresh draw for the
    /// synthetic datasets, the unsampled remainder of the target file for
    /// digits.
    pub fn build_test(&self, n: usize) -> Result<TestSet> {
        let ds = match self {
            DatasetSpec::Glyphs {
                resolution,
                transform,
                seed,
                ..
            } => make_glyph_pairs(n, *resolution, *transform, seed ^ TEST_SALT)?,
            DatasetSpec::Rings(r) => make_rings2d(n, r.affine(), r.seed ^ TEST_SALT)?,
            DatasetSpec::Digits(d) => {
                let (x1, l1) = d.load(DomainVar::TARGET)?;
                let total = x1.dims()[0];
                let picked = subset_indices(total, d.target_n, d.seed.wrapping_add(1))?;
                let mut used = vec![false; total];
                picked.iter().for_each(|&i| used[i] = true);
                let rest: Vec<usize> = (0..total).filter(|&i| !used[i]).take(n).collect();
                if rest.is_empty() {
                    return Err(Error::Config("no held-out target digits left".into()));
                }
                return Ok(TestSet {
                    samples: x1.select_batch(&rest)?,
                    labels: rest.iter().map(|&i| l1[i]).collect(),
                });
            }
        };
        let labels = ds
            .labels(DomainVar::TARGET)
            .ok_or_else(|| Error::ModelMismatch("test set without labels".into()))?
            .to_vec();
        Ok(TestSet {
            samples: ds.samples(DomainVar::TARGET).clone(),
            labels,
        })
    }
}

const TEST_SALT: u64 = 0x07e5_75e7;

impl DigitsSpec {
    fn load(&self, d: DomainVar) -> Result<(Tensor, Vec<usize>)> {
        let (img, lbl) = match d {
            DomainVar::SOURCE => (&self.source_images, &self.source_labels),
            _ => (&self.target_images, &self.target_labels),
        };
        let (x, y) = load_idx(img, lbl)?;
        let x = if x.dims()[2] == self.resolution {
            x
        } else {
            resize_nearest(&x, self.resolution)?
        };
        Ok((x, y))
    }
}

/// Network widths; which ones apply depends on the sample shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub latent_dim: usize,
    /// Base channel count of the image nets.
    pub width: usize,
    /// Hidden units of the point nets.
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 64,
            width: 32,
            hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: LossVariant,
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub uda: bool,
    pub d_steps_per_g_step: usize,
    /// 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
    /// 0 disables sample grids.
    pub sample_every: u64,
    pub net: NetConfig,
    pub dataset: DatasetSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: LossVariant::Standard,
            weights: LossWeights::default(),
            lr: LossVariant::Standard.default_lr(),
            batch_size: 64,
            iterations: 5000,
            seed: 0,
            uda: false,
            d_steps_per_g_step: 1,
            checkpoint_every: 1000,
            sample_every: 0,
            net: NetConfig::default(),
            dataset: DatasetSpec::Glyphs {
                n: 2000,
                resolution: 16,
                transform: GlyphTransform::Negative,
                seed: 0,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("d_steps", self.d_steps_per_g_step as u64),
            ("latent_dim", self.net.latent_dim as u64),
            ("width", self.net.width as u64),
            ("hidden", self.net.hidden as u64),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }

    /// Serializes every field as `key = value` lines accepted by
    /// [`TrainConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").expect("string write");
        kv("variant", &self.variant);
        kv("lambda", &self.weights.lambda);
        kv("beta", &self.weights.beta);
        kv("gamma", &self.weights.gamma);
        kv("lr", &self.lr);
        kv("batch_size", &self.batch_size);
        kv("iterations", &self.iterations);
        kv("seed", &self.seed);
        kv("uda", &self.uda);
        kv("d_steps", &self.d_steps_per_g_step);
        kv("checkpoint_every", &self.checkpoint_every);
        kv("sample_every", &self.sample_every);
        kv("latent_dim", &self.net.latent_dim);
        kv("width", &self.net.width);
        kv("hidden", &self.net.hidden);
        match &self.dataset {
            DatasetSpec::Glyphs {
                n,
                resolution,
                transform,
                seed,
            } => {
                kv("dataset", &"glyphs");
                kv("n", n);
                kv("resolution", resolution);
                kv("transform", transform);
                kv("data_seed", seed);
            }
            DatasetSpec::Rings(r) => {
                kv("dataset", &"rings");
                kv("n", &r.n);
                kv("ring_scale", &r.scale);
                kv("ring_rotation_deg", &r.rotation_deg);
                kv("ring_tx", &r.translation[0]);
                kv("ring_ty", &r.translation[1]);
                kv("data_seed", &r.seed);
            }
            DatasetSpec::Digits(d) => {
                kv("dataset", &"digits");
                kv("source_images", &d.source_images.display());
                kv("source_labels", &d.source_labels.display());
                kv("target_images", &d.target_images.display());
                kv("target_labels", &d.target_labels.display());
                kv("resolution", &d.resolution);
                kv("source_n", &d.source_n);
                kv("target_n", &d.target_n);
                kv("data_seed", &d.seed);
            }
        }
        s
    }

    /// Strict parser: blank lines and `#` comments are skipped; unknown,
    /// duplicate, malformed or inapplicable keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let c = Self::from_keys(&mut kv)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Applies `key = value` overrides (already split) on top of a parsed file.
    pub fn from_text_with(text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        for (k, v) in overrides {
            kv.set(k, v.clone());
        }
        let c = Self::from_keys(&mut kv)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    fn from_keys(kv: &mut KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let variant: LossVariant = kv.take("variant")?.unwrap_or(d.variant);
        let weights = LossWeights {
            lambda: kv.take("lambda")?.unwrap_or(d.weights.lambda),
            beta: kv.take("beta")?.unwrap_or(d.weights.beta),
            gamma: kv.take("gamma")?.unwrap_or(d.weights.gamma),
        };
        let dataset_kind: String = kv.take("dataset")?.unwrap_or_else(|| "glyphs".into());
        let data_seed = kv.take("data_seed")?.unwrap_or(0);
        let dataset = match dataset_kind.as_str() {
            "glyphs" => DatasetSpec::Glyphs {
                n: kv.take("n")?.unwrap_or(2000),
                resolution: kv.take("resolution")?.unwrap_or(16),
                transform: kv.take("transform")?.unwrap_or(GlyphTransform::Negative),
                seed: data_seed,
            },
            "rings" => DatasetSpec::Rings(RingsSpec {
                n: kv.take("n")?.unwrap_or(2000),
                scale: kv.take("ring_scale")?.unwrap_or(1.5),
                rotation_deg: kv.take("ring_rotation_deg")?.unwrap_or(30.0),
                translation: [kv.take("ring_tx")?.unwrap_or(0.0), kv.take("ring_ty")?.unwrap_or(0.0)],
                seed: data_seed,
            }),
            "digits" => DatasetSpec::Digits(DigitsSpec {
                source_images: kv.require("source_images")?,
                source_labels: kv.require("source_labels")?,
                target_images: kv.require("target_images")?,
                target_labels: kv.require("target_labels")?,
                resolution: kv.take("resolution")?.unwrap_or(14),
                source_n: kv.take("source_n")?.unwrap_or(2000),
                target_n: kv.take("target_n")?.unwrap_or(1800),
                seed: data_seed,
            }),
            other => return Err(Error::Config(format!("dataset: unknown kind {other:?}"))),
        };
        Ok(TrainConfig {
            variant,
            weights,
            lr: kv.take("lr")?.unwrap_or(variant.default_lr()),
            batch_size: kv.take("batch_size")?.unwrap_or(d.batch_size),
            iterations: kv.take("iterations")?.unwrap_or(d.iterations),
            seed: kv.take("seed")?.unwrap_or(d.seed),
            uda: kv.take("uda")?.unwrap_or(d.uda),
            d_steps_per_g_step: kv.take("d_steps")?.unwrap_or(d.d_steps_per_g_step),
            checkpoint_every: kv.take("checkpoint_every")?.unwrap_or(d.checkpoint_every),
            sample_every: kv.take("sample_every")?.unwrap_or(d.sample_every),
            net: NetConfig {
                latent_dim: kv.take("latent_dim")?.unwrap_or(d.net.latent_dim),
                width: kv.take("width")?.unwrap_or(d.net.width),
                hidden: kv.take("hidden")?.unwrap_or(d.net.hidden),
            },
            dataset,
        })
    }
}

/// `key = value` lines, consumed key by key.
struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(Error::Config(format!("duplicate key {k:?} on line {}", i + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), (0, value));
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((_, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: invalid value {v:?}"))),
        }
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| Error::Config(format!("{key}: required")))
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::Config(format!("unknown key {k:?} on line {line}"))),
        }
    }
}
