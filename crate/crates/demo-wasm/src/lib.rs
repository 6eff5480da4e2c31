//! Browser bindings: glyph pair previews and a small rings trainer with
//! live λ/β controls, paired samples and latent interpolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regcgan::data::{edge_transform, render_glyph, DomainDataset, GlyphTransform, LatentSampler};
use regcgan::eval::{interpolate, render, uda_accuracy};
use regcgan::nn::DomainVar;
use regcgan::objectives::LossWeights;
use regcgan::tensor::Tensor;
use regcgan::trainer::{TrainConfig, TrainState};
use wasm_bindgen::prelude::*;

fn js(e: regcgan::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One glyph of `family` and its transformed copy, concatenated as two
/// `res`×`res` images in [−1, 1].
pub fn glyph_pair_values(family: usize, transform: &str, res: usize, seed: u64) -> regcgan::Result<Vec<f64>> {
    let transform: GlyphTransform = transform.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::new(&[1, 1, res, res], render_glyph(family, res, &mut rng))?;
    let y = match transform {
        GlyphTransform::Negative => x.map(|v| -v),
        GlyphTransform::Edge => edge_transform(&x)?,
    };
    let mut out = x.data().to_vec();
    out.extend_from_slice(y.data());
    Ok(out)
}

#[wasm_bindgen]
pub fn glyph_pair(family: u32, transform: &str, res: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    glyph_pair_values(family as usize, transform, res as usize, seed as u64).map_err(js)
}

const RINGS_CONFIG: &str = "\
dataset = rings
n = 800
uda = true
batch_size = 64
latent_dim = 4
hidden = 32
iterations = 0
checkpoint_every = 0
";

/// Rings trainer in UDA mode; weights can change between steps.
#[wasm_bindgen]
pub struct RingsDemo {
    state: TrainState,
    ds: DomainDataset,
}

impl RingsDemo {
    pub fn build(lambda: f64, beta: f64, seed: u64) -> regcgan::Result<RingsDemo> {
        let mut config = TrainConfig::from_text(RINGS_CONFIG)?;
        config.seed = seed;
        config.dataset = config.dataset.reseeded(seed);
        config.weights = weights(lambda, beta, config.weights.gamma)?;
        let ds = config.dataset.build()?;
        let state = TrainState::new(config, &ds)?;
        Ok(RingsDemo { state, ds })
    }

    /// Runs `steps` iterations; returns the last step's
    /// `[iteration, loss_d, loss_g, reg_g, reg_d, acc_src]`.
    pub fn advance(&mut self, steps: u64) -> regcgan::Result<Vec<f64>> {
        let until = self.state.iteration + steps;
        let metrics = self.state.run(&self.ds, until)?;
        Ok(match metrics.last() {
            Some(m) => vec![
                m.iter as f64,
                m.loss_d,
                m.loss_g,
                m.reg_g,
                m.reg_d,
                m.acc_src.unwrap_or(f64::NAN),
            ],
            None => vec![self.state.iteration as f64],
        })
    }

    /// `n` generated pairs from shared latents as `[x₀, y₀, x₁, y₁]` rows.
    pub fn pair_values(&self, n: usize, seed: u64) -> regcgan::Result<Vec<f64>> {
        let gen = &self.state.model.gen;
        let z = LatentSampler::new(gen.latent_dim(), seed).sample(n)?;
        let a = render(gen, &z, DomainVar::SOURCE, n)?;
        let b = render(gen, &z, DomainVar::TARGET, n)?;
        Ok(rows(&a, &b))
    }

    /// Pairs along the straight latent path between two random latents.
    pub fn path_values(&self, steps: usize, seed: u64) -> regcgan::Result<Vec<f64>> {
        let gen = &self.state.model.gen;
        let dim = gen.latent_dim();
        let z = LatentSampler::new(dim, seed).sample(2)?;
        let frames = interpolate(gen, &z.data()[..dim], &z.data()[dim..], steps)?;
        Ok(frames.iter().flat_map(|[a, b]| rows(a, b)).collect())
    }

    pub fn target_accuracy_value(&self) -> regcgan::Result<f64> {
        let m = &self.state.model;
        let cls = m
            .cls
            .as_ref()
            .ok_or(regcgan::Error::ModelMismatch("no classifier".into()))?;
        let labels = self.ds.labels(DomainVar::TARGET).unwrap_or_default();
        uda_accuracy(
            &m.disc,
            cls,
            self.ds.samples(DomainVar::TARGET),
            labels,
            DomainVar::TARGET,
        )
    }
}

fn weights(lambda: f64, beta: f64, gamma: f64) -> regcgan::Result<LossWeights> {
    let w = LossWeights { lambda, beta, gamma };
    w.validate()?;
    Ok(w)
}

fn rows(a: &Tensor, b: &Tensor) -> Vec<f64> {
    a.data()
        .chunks(2)
        .zip(b.data().chunks(2))
        .flat_map(|(p, q)| [p[0], p[1], q[0], q[1]])
        .collect()
}

#[wasm_bindgen]
impl RingsDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(lambda: f64, beta: f64, seed: u32) -> Result<RingsDemo, JsError> {
        RingsDemo::build(lambda, beta, seed as u64).map_err(js)
    }

    pub fn set_weights(&mut self, lambda: f64, beta: f64) -> Result<(), JsError> {
        let gamma = self.state.config.weights.gamma;
        self.state.config.weights = weights(lambda, beta, gamma).map_err(js)?;
        Ok(())
    }

    pub fn iteration(&self) -> f64 {
        self.state.iteration as f64
    }

    pub fn train(&mut self, steps: u32) -> Result<Vec<f64>, JsError> {
        self.advance(steps as u64).map_err(js)
    }

    /// Real samples of both domains as `[x, y, domain, class]` rows.
    pub fn real(&self, n: u32) -> Vec<f64> {
        let mut out = Vec::new();
        for d in DomainVar::BOTH {
            let x = self.ds.samples(d);
            let labels = self.ds.labels(d).unwrap_or_default();
            for (i, p) in x.data().chunks(2).take(n as usize).enumerate() {
                let class = labels.get(i).map_or(f64::NAN, |&c| c as f64);
                out.extend_from_slice(&[p[0], p[1], d.id() as f64, class]);
            }
        }
        out
    }

    pub fn pairs(&self, n: u32, seed: u32) -> Result<Vec<f64>, JsError> {
        self.pair_values(n as usize, seed as u64).map_err(js)
    }

    pub fn path(&self, steps: u32, seed: u32) -> Result<Vec<f64>, JsError> {
        self.path_values(steps as usize, seed as u64).map_err(js)
    }

    pub fn target_accuracy(&self) -> Result<f64, JsError> {
        self.target_accuracy_value().map_err(js)
    }
}
