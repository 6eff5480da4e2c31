use std::collections::BTreeMap;

use super::domain::{DomainInjector, DomainVar};
use super::params::{Bound, ParamStore};
use super::spec::{init_layout, Activation, Block, ClassifierSpec, DiscriminatorSpec, GeneratorSpec, LayerKind};
use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, Shape, Var};

/// Running-average momentum for batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm uses per-batch statistics.
    Train,
    /// Batch-norm uses running averages; forwards are pure functions of
    /// (params, inputs).
    Eval,
}

/// Named intermediate activations of a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Taps(BTreeMap<String, Var>);

impl Taps {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.0.get(name).copied()
    }

    pub fn require(&self, name: &'static str) -> Result<Var> {
        self.get(name).ok_or(Error::MissingTaps(name))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn insert(&mut self, name: String, v: Var) {
        self.0.insert(name, v);
    }
}

pub const GEN_FIRST_LAYER: &str = "G_h0";
pub const DISC_FEATURES: &str = "D_hi";

fn apply_activation(g: &mut Graph, x: Var, a: Activation) -> Var {
    match a {
        Activation::Identity => x,
        Activation::Relu => g.relu(x),
        Activation::LeakyRelu(s) => g.leaky_relu(x, s),
        Activation::Tanh => g.tanh(x),
        Activation::Sigmoid => g.sigmoid(x),
    }
}

fn flatten(g: &mut Graph, x: Var) -> Result<Var> {
    let dims = g.shape(x).dims().to_vec();
    if dims.len() == 2 {
        return Ok(x);
    }
    let rest: usize = dims[1..].iter().product();
    g.reshape(x, &[dims[0], rest])
}

fn dense(g: &mut Graph, x: Var, kernel: Var, bias: Var) -> Result<Var> {
    let flat = flatten(g, x)?;
    let y = g.matmul(flat, kernel)?;
    g.add_bias(y, bias)
}

/// Runs one block's layer (no batch-norm, no activation).
fn apply_layer(g: &mut Graph, bound: &Bound, prefix: &str, block: &Block, x: Var) -> Result<Var> {
    let kernel = bound.var(&format!("{prefix}.kernel"))?;
    let bias = bound.var(&format!("{prefix}.bias"))?;
    match block.kind {
        LayerKind::Dense { .. } => dense(g, x, kernel, bias),
        LayerKind::Conv { stride, pad, .. } => g.conv2d(x, kernel, Some(bias), stride, pad),
        LayerKind::ConvTranspose { stride, pad, .. } => g.conv2d_transpose(x, kernel, Some(bias), stride, pad),
    }
}

/// Domain-conditioned generator G(z | d).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    pub spec: GeneratorSpec,
    pub params: ParamStore,
    /// Running batch-norm statistics, keyed by block index.
    pub running: BTreeMap<usize, BatchStats>,
}

pub struct GenForward {
    pub image: Var,
    pub taps: Taps,
    /// Batch statistics of each batch-normed block (train mode only).
    pub batch_stats: Vec<(usize, BatchStats)>,
}

/// Output of [`GeneratorNet::forward_pair`]; index 0 is the source domain.
pub struct PairForward {
    pub images: [Var; 2],
    pub taps: [Taps; 2],
    /// The underlying `2b`-row forward.
    pub joint: GenForward,
}

impl GeneratorNet {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        let layout = spec.layout()?;
        let params = init_layout(&layout, seed)?;
        let shapes = spec.layer_shapes()?;
        let running = spec
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.batch_norm)
            .map(|(i, _)| {
                let c = match shapes[i] {
                    super::SampleShape::Flat(n) => n,
                    super::SampleShape::Image { channels, .. } => channels,
                };
                (
                    i,
                    BatchStats {
                        mean: vec![0.0; c],
                        var: vec![1.0; c],
                    },
                )
            })
            .collect();
        Ok(GeneratorNet { spec, params, running })
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    /// Forward pass. `taps["G_h0"]` is the post-activation output of the
    /// first block, exactly the tensor the second block consumes.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, z: Var, d: DomainVar, mode: Mode) -> Result<GenForward> {
        let b = g.shape(z).dims().first().copied().unwrap_or(0);
        self.forward_domains(g, bound, z, vec![d; b], mode)
    }

    /// Renders every latent under both domains in a single batch `[z; z]`,
    /// so train-mode batch statistics span both domains, then splits the
    /// output and every tap back into per-domain halves.
    pub fn forward_pair(&self, g: &mut Graph, bound: &Bound, z: Var, mode: Mode) -> Result<PairForward> {
        let b = g.shape(z).dims().first().copied().unwrap_or(0);
        let zz = g.concat(&[z, z], 0)?;
        let mut domains = vec![DomainVar::SOURCE; b];
        domains.extend(vec![DomainVar::TARGET; b]);
        let out = self.forward_domains(g, bound, zz, domains, mode)?;
        let mut images = [out.image; 2];
        let mut taps = [Taps::default(), Taps::default()];
        for half in 0..2 {
            images[half] = g.slice_batch(out.image, half * b, (half + 1) * b)?;
            for (name, &v) in &out.taps.0 {
                let part = g.slice_batch(v, half * b, (half + 1) * b)?;
                taps[half].insert(name.clone(), part);
            }
        }
        Ok(PairForward {
            images,
            taps,
            joint: out,
        })
    }

    /// Forward pass with one domain code per sample.
    pub fn forward_domains(
        &self,
        g: &mut Graph,
        bound: &Bound,
        z: Var,
        domains: Vec<DomainVar>,
        mode: Mode,
    ) -> Result<GenForward> {
        let zs = g.shape(z).clone();
        if zs.rank() != 2 || zs.dim(1) != self.spec.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "generator_forward",
                left: Shape::new(&[zs.dims().first().copied().unwrap_or(1), self.spec.latent_dim])?,
                right: zs,
            });
        }
        let b = zs.dim(0);
        let mut x = if self.spec.spatial_input {
            g.reshape(z, &[b, self.spec.latent_dim, 1, 1])?
        } else {
            z
        };
        let mut injector = DomainInjector::new(domains);
        let mut taps = Taps::default();
        let mut batch_stats = Vec::new();
        for (i, block) in self.spec.blocks.iter().enumerate() {
            let prefix = format!("gen.layer{i}");
            let inp = injector.inject(g, x, i)?;
            let mut y = apply_layer(g, bound, &prefix, block, inp)?;
            if block.batch_norm {
                let scale = bound.var(&format!("{prefix}.bn_scale"))?;
                let shift = bound.var(&format!("{prefix}.bn_shift"))?;
                let running = match mode {
                    Mode::Train => None,
                    Mode::Eval => Some(
                        self.running
                            .get(&i)
                            .ok_or_else(|| Error::ModelMismatch(format!("no running stats for block {i}")))?,
                    ),
                };
                let (normed, stats) = g.batch_norm(y, scale, shift, running)?;
                if mode == Mode::Train {
                    batch_stats.push((i, stats));
                }
                y = normed;
            }
            x = apply_activation(g, y, block.activation);
            taps.insert(format!("G_h{i}"), x);
        }
        Ok(GenForward {
            image: x,
            taps,
            batch_stats,
        })
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn absorb_batch_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (i, s) in stats {
            if let Some(r) = self.running.get_mut(i) {
                for (rm, m) in r.mean.iter_mut().zip(&s.mean) {
                    *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * m;
                }
                for (rv, v) in r.var.iter_mut().zip(&s.var) {
                    *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * v;
                }
            }
        }
    }
}

/// Domain-conditioned discriminator D(x | d) with the feature tap `D_hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore,
}

pub struct DiscForward {
    /// One raw (pre-sigmoid) score per sample, `b × 1`.
    pub score: Var,
    pub taps: Taps,
}

impl DiscriminatorNet {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        let params = init_layout(&spec.layout()?, seed)?;
        Ok(DiscriminatorNet { spec, params })
    }

    pub fn feature_width(&self) -> Result<usize> {
        self.spec.feature_width()
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var, d: DomainVar) -> Result<DiscForward> {
        let xs = g.shape(x).clone();
        let b = xs.dims().first().copied().unwrap_or(0);
        if xs.rank() < 2 || xs.dims() != self.spec.input.batch_dims(b).as_slice() {
            return Err(Error::ShapeMismatch {
                op: "discriminator_forward",
                left: Shape::new(&self.spec.input.batch_dims(b.max(1)))?,
                right: xs,
            });
        }
        let mut injector = DomainInjector::new(vec![d; b]);
        let mut h = injector.inject(g, x, 0)?;
        let mut taps = Taps::default();
        for (i, block) in self.spec.hidden.iter().enumerate() {
            let prefix = format!("disc.layer{i}");
            let y = apply_layer(g, bound, &prefix, block, h)?;
            h = apply_activation(g, y, block.activation);
            taps.insert(format!("D_h{i}"), h);
        }
        let features = flatten(g, h)?;
        taps.insert(DISC_FEATURES.to_string(), features);
        let kernel = bound.var("disc.score.kernel")?;
        let bias = bound.var("disc.score.bias")?;
        let score = dense(g, features, kernel, bias)?;
        Ok(DiscForward { score, taps })
    }
}

/// Dense head mapping `D_hi` features to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub spec: ClassifierSpec,
    pub params: ParamStore,
}

impl ClassifierHead {
    pub fn new(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        let params = init_layout(&spec.layout(), seed)?;
        Ok(ClassifierHead { spec, params })
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Unnormalized logits, `b × K`.
    pub fn classify(&self, g: &mut Graph, bound: &Bound, features: Var) -> Result<Var> {
        let fs = g.shape(features).clone();
        if fs.rank() != 2 || fs.dim(1) != self.spec.features {
            return Err(Error::ShapeMismatch {
                op: "classify",
                left: Shape::new(&[fs.dims().first().copied().unwrap_or(1), self.spec.features])?,
                right: fs,
            });
        }
        let kernel = bound.var("cls.kernel")?;
        let bias = bound.var("cls.bias")?;
        dense(g, features, kernel, bias)
    }
}
