use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::nn::DomainVar;
use crate::tensor::Tensor;

/// Exact position of a ChaCha8 stream, for checkpointing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    /// Lossless encoding as 64-bit words.
    pub fn to_words(&self) -> [u64; 7] {
        let mut w = [0u64; 7];
        for (i, c) in self.seed.chunks(8).enumerate() {
            w[i] = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        }
        w[4] = self.stream;
        w[5] = self.word_pos as u64;
        w[6] = (self.word_pos >> 64) as u64;
        w
    }

    pub fn from_words(w: &[u64]) -> Result<Self> {
        if w.len() != 7 {
            return Err(Error::Checkpoint(format!("rng state needs 7 words, got {}", w.len())));
        }
        let mut seed = [0u8; 32];
        for i in 0..4 {
            seed[8 * i..8 * i + 8].copy_from_slice(&w[i].to_le_bytes());
        }
        Ok(RngState {
            seed,
            stream: w[4],
            word_pos: w[5] as u128 | ((w[6] as u128) << 64),
        })
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Latents drawn uniformly from [−1, 1]^dim.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSampler {
    dim: usize,
    rng: ChaCha8Rng,
}

impl LatentSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        LatentSampler {
            dim,
            rng: stream_rng(seed, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&mut self, b: usize) -> Result<Tensor> {
        let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
        let data = (0..b * self.dim).map(|_| u.sample(&mut self.rng)).collect();
        Tensor::new(&[b, self.dim], data)
    }

    pub fn state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn restore(dim: usize, state: &RngState) -> Self {
        LatentSampler {
            dim,
            rng: state.restore(),
        }
    }
}

/// Epoch-wise random permutation of `0..n`, reshuffled on wrap.
#[derive(Clone, Debug, PartialEq)]
pub struct ShuffledCursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl ShuffledCursor {
    pub fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = stream_rng(seed, stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        ShuffledCursor { order, pos: 0, rng }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    pub fn take(&mut self, b: usize) -> Vec<usize> {
        (0..b).map(|_| self.next_index()).collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `(order, position, rng)` for checkpointing.
    pub fn parts(&self) -> (&[usize], usize, RngState) {
        (&self.order, self.pos, RngState::capture(&self.rng))
    }

    pub fn from_parts(order: Vec<usize>, pos: usize, rng: &RngState) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Checkpoint("cursor order is not a permutation".into()));
            }
        }
        if pos > order.len() {
            return Err(Error::Checkpoint(format!("cursor position {pos} past {}", order.len())));
        }
        Ok(ShuffledCursor {
            order,
            pos,
            rng: rng.restore(),
        })
    }
}

/// One latent batch shared by both domain forwards, plus independently
/// drawn real samples per domain.
#[derive(Clone, Debug)]
pub struct PairedBatch {
    pub z: Tensor,
    pub reals: [Tensor; 2],
    /// Positions of `reals` in each domain's own storage order.
    pub indices: [Vec<usize>; 2],
    /// Source-domain labels; present only in domain-adaptation mode.
    pub labels_d0: Option<Vec<usize>>,
}

/// Latent sampler and per-domain cursors, each on its own stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Batcher {
    pub sampler: LatentSampler,
    pub cursors: [ShuffledCursor; 2],
}

impl Batcher {
    pub fn new(ds: &DomainDataset, latent_dim: usize, seed: u64) -> Self {
        Batcher {
            sampler: LatentSampler::new(latent_dim, seed),
            cursors: [
                ShuffledCursor::new(ds.len(DomainVar::SOURCE), seed, 2),
                ShuffledCursor::new(ds.len(DomainVar::TARGET), seed, 3),
            ],
        }
    }

    pub fn next_batch(&mut self, ds: &DomainDataset, b: usize, uda: bool) -> Result<PairedBatch> {
        if b == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        for (c, d) in self.cursors.iter().zip(DomainVar::BOTH) {
            if c.len() != ds.len(d) {
                return Err(Error::ModelMismatch(format!(
                    "cursor over {} samples, domain {} has {}",
                    c.len(),
                    d.id(),
                    ds.len(d)
                )));
            }
        }
        let z = self.sampler.sample(b)?;
        let i0 = self.cursors[0].take(b);
        let i1 = self.cursors[1].take(b);
        let reals = [
            ds.samples(DomainVar::SOURCE).select_batch(&i0)?,
            ds.samples(DomainVar::TARGET).select_batch(&i1)?,
        ];
        let labels_d0 = if uda {
            let l = ds
                .labels(DomainVar::SOURCE)
                .ok_or_else(|| Error::ModelMismatch(format!("dataset {} has no source labels", ds.name)))?;
            Some(i0.iter().map(|&i| l[i]).collect())
        } else {
            None
        };
        Ok(PairedBatch {
            z,
            reals,
            indices: [i0, i1],
            labels_d0,
        })
    }
}
