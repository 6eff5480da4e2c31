//! Alternating discriminator/generator updates, run logging and
//! checkpoints.

mod checkpoint;
mod config;
mod metrics;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{DatasetSpec, DigitsSpec, NetConfig, RingsSpec, TestSet, TrainConfig};
pub use metrics::{
    metrics_csv, parse_metrics_csv, read_metrics_csv, write_metrics_csv, MetricsRow, StepMetrics, METRICS_HEADER,
};

use std::path::{Path, PathBuf};

use crate::data::{Batcher, DomainDataset, PairedBatch};
use crate::error::{Error, Result};
use crate::nn::{
    Bound, ClassifierHead, ClassifierSpec, DiscriminatorNet, DiscriminatorSpec, DomainVar, GeneratorNet, GeneratorSpec,
    GradMap, Mode, SampleShape, DISC_FEATURES,
};
use crate::objectives::{compose_d_loss, compose_g_loss, DiscInputs};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Graph, Var};

/// Any loss above this magnitude aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// The three networks of one run. The classifier exists only in
/// domain-adaptation mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub gen: GeneratorNet,
    pub disc: DiscriminatorNet,
    pub cls: Option<ClassifierHead>,
}

fn derive_seed(seed: u64, k: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(k.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Model {
    /// Networks sized for samples of `sample_dims` (`[1, r, r]` images or
    /// `[k]` points).
    pub fn new(config: &TrainConfig, sample_dims: &[usize], classes: Option<usize>) -> Result<Self> {
        let net = &config.net;
        let (gspec, dspec) = match *sample_dims {
            [1, h, w] if h == w => (
                GeneratorSpec::image(net.latent_dim, net.width, h)?,
                DiscriminatorSpec::image(net.width, h)?,
            ),
            [k] => (
                GeneratorSpec::points(net.latent_dim, net.hidden, k),
                DiscriminatorSpec::points(net.hidden, k),
            ),
            _ => {
                return Err(Error::Unsupported(format!("samples shaped {sample_dims:?}")));
            }
        };
        let gen = GeneratorNet::new(gspec, derive_seed(config.seed, 1))?;
        let disc = DiscriminatorNet::new(dspec, derive_seed(config.seed, 2))?;
        let cls = if config.uda {
            let classes = classes.ok_or_else(|| Error::ModelMismatch("domain adaptation needs class labels".into()))?;
            let spec = ClassifierSpec {
                features: disc.feature_width()?,
                classes,
            };
            Some(ClassifierHead::new(spec, derive_seed(config.seed, 3))?)
        } else {
            None
        };
        Ok(Model { gen, disc, cls })
    }

    fn bind_disc(&self, g: &mut Graph, trainable: bool) -> Bound {
        let mut b = self.disc.params.bind(g, trainable);
        if let Some(c) = &self.cls {
            b.extend(c.params.bind(g, trainable));
        }
        b
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub batcher: Batcher,
    pub iteration: u64,
}

/// Outcome of one discriminator update.
#[derive(Clone, Debug, PartialEq)]
pub struct DUpdate {
    pub loss: f64,
    pub gan: f64,
    pub reg: f64,
    pub cls: Option<f64>,
    pub acc: Option<f64>,
    pub grad_norm: f64,
}

/// Outcome of one generator update.
#[derive(Clone, Debug, PartialEq)]
pub struct GUpdate {
    pub loss: f64,
    pub gan: f64,
    pub reg: f64,
    pub grad_norm: f64,
}

fn grad_norm(g: &GradMap) -> f64 {
    g.values().map(|t| t.dot(t)).sum::<f64>().sqrt()
}

fn scalar(g: &Graph, v: Option<Var>) -> Option<f64> {
    v.map(|v| g.value(v).item())
}

fn accuracy(logits: &crate::tensor::Tensor, labels: &[usize]) -> f64 {
    let k = logits.dims()[1];
    let hits = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl TrainState {
    pub fn new(config: TrainConfig, ds: &DomainDataset) -> Result<Self> {
        config.validate()?;
        let model = Model::new(&config, ds.sample_dims(), ds.num_classes())?;
        let adam = AdamConfig::with_lr(config.lr);
        let adam_g = AdamState::new(adam, &[&model.gen.params]);
        let mut d_stores = vec![&model.disc.params];
        d_stores.extend(model.cls.as_ref().map(|c| &c.params));
        let adam_d = AdamState::new(adam, &d_stores);
        let batcher = Batcher::new(ds, config.net.latent_dim, derive_seed(config.seed, 4));
        Ok(TrainState {
            config,
            model,
            adam_g,
            adam_d,
            batcher,
            iteration: 0,
        })
    }

    pub fn next_batch(&mut self, ds: &DomainDataset) -> Result<PairedBatch> {
        self.batcher.next_batch(ds, self.config.batch_size, self.config.uda)
    }

    fn guard(&self, what: &'static str, value: f64, last: Option<&Path>) -> Result<()> {
        if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                iteration: self.iteration,
                what,
                value,
                last_checkpoint: last.map(Path::to_path_buf),
            });
        }
        Ok(())
    }

    /// One discriminator (and classifier) update on generated pairs that
    /// are cut from the generator's graph.
    pub fn update_d(&mut self, batch: &PairedBatch) -> Result<DUpdate> {
        self.update_d_at(batch, None)
    }

    /// One generator update with fresh forwards through the current
    /// discriminator.
    pub fn update_g(&mut self, batch: &PairedBatch) -> Result<GUpdate> {
        self.update_g_at(batch, None)
    }

    fn update_d_at(&mut self, batch: &PairedBatch, last: Option<&Path>) -> Result<DUpdate> {
        let m = &self.model;
        let mut g = Graph::new();
        let gb = m.gen.params.bind(&mut g, false);
        let db = m.bind_disc(&mut g, true);
        let z = g.constant(batch.z.clone());
        let pair = m.gen.forward_pair(&mut g, &gb, z, Mode::Train)?;
        let mut real = [z; 2];
        let mut fake = [z; 2];
        let mut fake_taps = Vec::with_capacity(2);
        let mut src_features = None;
        for d in DomainVar::BOTH {
            let x = g.detach(pair.images[d.id()]);
            let f = m.disc.forward(&mut g, &db, x, d)?;
            fake[d.id()] = f.score;
            fake_taps.push(f.taps);
            let xr = g.constant(batch.reals[d.id()].clone());
            let r = m.disc.forward(&mut g, &db, xr, d)?;
            real[d.id()] = r.score;
            if d == DomainVar::SOURCE {
                src_features = Some(r.taps.require(DISC_FEATURES)?);
            }
        }
        let labeled = match (&m.cls, &batch.labels_d0, src_features) {
            (Some(c), Some(labels), Some(feat)) => Some((c.classify(&mut g, &db, feat)?, labels.as_slice())),
            (Some(_), None, _) => return Err(Error::ModelMismatch("classifier step without source labels".into())),
            _ => None,
        };
        let parts = compose_d_loss(
            &mut g,
            self.config.variant,
            &self.config.weights,
            &DiscInputs {
                real,
                fake,
                fake_taps: Some([&fake_taps[0], &fake_taps[1]]),
                labeled,
            },
        )?;
        let loss = g.value(parts.total).item();
        self.guard("loss_d", loss, last)?;
        let acc = labeled.map(|(logits, labels)| accuracy(g.value(logits), labels));
        let grads = g.backward(parts.total)?;
        let gm = db.collect(&grads);
        let out = DUpdate {
            loss,
            gan: g.value(parts.gan).item(),
            reg: scalar(&g, parts.reg).unwrap_or(0.0),
            cls: scalar(&g, parts.cls),
            acc,
            grad_norm: grad_norm(&gm),
        };
        let m = &mut self.model;
        let mut stores = vec![&mut m.disc.params];
        stores.extend(m.cls.as_mut().map(|c| &mut c.params));
        self.adam_d.step(&mut stores, &gm)?;
        Ok(out)
    }

    fn update_g_at(&mut self, batch: &PairedBatch, last: Option<&Path>) -> Result<GUpdate> {
        let m = &self.model;
        let mut g = Graph::new();
        let gb = m.gen.params.bind(&mut g, true);
        let db = m.disc.params.bind(&mut g, false);
        let z = g.constant(batch.z.clone());
        let pair = m.gen.forward_pair(&mut g, &gb, z, Mode::Train)?;
        let mut scores = [z; 2];
        for d in DomainVar::BOTH {
            scores[d.id()] = m.disc.forward(&mut g, &db, pair.images[d.id()], d)?.score;
        }
        let parts = compose_g_loss(
            &mut g,
            self.config.variant,
            &self.config.weights,
            scores,
            [&pair.taps[0], &pair.taps[1]],
        )?;
        let loss = g.value(parts.total).item();
        self.guard("loss_g", loss, last)?;
        let grads = g.backward(parts.total)?;
        let gm = gb.collect(&grads);
        let out = GUpdate {
            loss,
            gan: g.value(parts.gan).item(),
            reg: scalar(&g, parts.reg).unwrap_or(0.0),
            grad_norm: grad_norm(&gm),
        };
        self.adam_g.step(&mut [&mut self.model.gen.params], &gm)?;
        self.model.gen.absorb_batch_stats(&pair.joint.batch_stats);
        Ok(out)
    }

    /// A discriminator update followed by a generator update on the same
    /// batch.
    pub fn train_step(&mut self, batch: &PairedBatch) -> Result<StepMetrics> {
        self.step_with(batch, None)
    }

    fn step_with(&mut self, batch: &PairedBatch, last: Option<&Path>) -> Result<StepMetrics> {
        let d = self.update_d_at(batch, last)?;
        let g = self.update_g_at(batch, last)?;
        self.iteration += 1;
        Ok(StepMetrics {
            iter: self.iteration,
            loss_d: d.loss,
            loss_g: g.loss,
            gan_d: d.gan,
            gan_g: g.gan,
            reg_g: g.reg,
            reg_d: d.reg,
            cls: d.cls,
            acc_src: d.acc,
            grad_norm_d: d.grad_norm,
            grad_norm_g: g.grad_norm,
        })
    }

    /// Extra discriminator updates, if configured, each draw their own
    /// batch before the joint step.
    fn full_step(&mut self, ds: &DomainDataset, last: Option<&Path>) -> Result<StepMetrics> {
        for _ in 1..self.config.d_steps_per_g_step {
            let b = self.next_batch(ds)?;
            self.update_d_at(&b, last)?;
        }
        let b = self.next_batch(ds)?;
        self.step_with(&b, last)
    }

    /// Trains until `self.iteration == until`, without touching the disk.
    pub fn run(&mut self, ds: &DomainDataset, until: u64) -> Result<Vec<StepMetrics>> {
        let mut out = Vec::new();
        while self.iteration < until {
            out.push(self.full_step(ds, None)?);
        }
        Ok(out)
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
    /// Checkpoint files written, in order.
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("checkpoint-{iteration:06}.bin"))
}

/// Trains `config.iterations` steps from scratch. With `out_dir`, writes
/// `metrics.csv`, periodic checkpoints and the final checkpoint there.
pub fn train(config: TrainConfig, ds: &DomainDataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let state = TrainState::new(config, ds)?;
    continue_training(state, ds, out_dir)
}

/// Continues `state` up to `state.config.iterations`. Metrics written so
/// far are flushed even when training aborts.
pub fn continue_training(mut state: TrainState, ds: &DomainDataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let until = state.config.iterations;
    let every = state.config.checkpoint_every;
    let mut metrics = Vec::new();
    let mut checkpoints: Vec<PathBuf> = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        if state.iteration == 0 && every > 0 {
            let p = checkpoint_path(dir, 0);
            save_checkpoint(&state, &p)?;
            checkpoints.push(p);
        }
    }
    let result = (|| -> Result<()> {
        while state.iteration < until {
            let m = state.full_step(ds, checkpoints.last().map(PathBuf::as_path))?;
            metrics.push(m);
            if let Some(dir) = out_dir {
                let it = state.iteration;
                if every > 0 && it.is_multiple_of(every) && it < until {
                    let p = checkpoint_path(dir, it);
                    save_checkpoint(&state, &p)?;
                    checkpoints.push(p);
                }
                let se = state.config.sample_every;
                let images = matches!(state.model.gen.spec.output_shape()?, SampleShape::Image { .. });
                if images && se > 0 && it.is_multiple_of(se) {
                    crate::eval::write_pair_grid(
                        &state.model,
                        &dir.join(format!("samples-{it:06}.pgm")),
                        8,
                        state.config.seed,
                    )?;
                }
            }
        }
        Ok(())
    })();
    if let Some(dir) = out_dir {
        write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
    }
    result?;
    if let Some(dir) = out_dir {
        let p = checkpoint_path(dir, state.iteration);
        if checkpoints.last() != Some(&p) {
            save_checkpoint(&state, &p)?;
            checkpoints.push(p);
        }
    }
    Ok(TrainOutcome {
        state,
        metrics,
        checkpoints,
    })
}
