//! Binary checkpoints: magic, version, the config text, then
//! length-prefixed `(name, shape, little-endian f64)` records. Integer state
//! (counters, RNG words, permutations) is stored bit-cast into f64 slots.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Model, TrainConfig, TrainState};
use crate::data::{Batcher, LatentSampler, RngState, ShuffledCursor};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{BatchStats, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RCGANCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bits(words: impl IntoIterator<Item = u64>) -> Tensor {
    let data: Vec<f64> = words.into_iter().map(f64::from_bits).collect();
    Tensor::new(&[data.len()], data).expect("rank-1")
}

fn words(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn put_store(rec: &mut BTreeMap<String, Tensor>, prefix: &str, s: &ParamStore) {
    for (k, t) in s.iter() {
        rec.insert(format!("{prefix}{k}"), t.clone());
    }
}

fn put_adam(rec: &mut BTreeMap<String, Tensor>, who: &str, a: &AdamState) {
    rec.insert(format!("{who}.t"), bits([a.t]));
    for (k, t) in &a.m {
        rec.insert(format!("{who}.m.{k}"), t.clone());
    }
    for (k, t) in &a.v {
        rec.insert(format!("{who}.v.{k}"), t.clone());
    }
}

fn records(s: &TrainState) -> BTreeMap<String, Tensor> {
    let mut rec = BTreeMap::new();
    rec.insert("state.iteration".into(), bits([s.iteration]));
    put_store(&mut rec, "param.", &s.model.gen.params);
    put_store(&mut rec, "param.", &s.model.disc.params);
    if let Some(c) = &s.model.cls {
        put_store(&mut rec, "param.", &c.params);
    }
    for (i, st) in &s.model.gen.running {
        rec.insert(
            format!("running.{i}.mean"),
            Tensor::new(&[st.mean.len()], st.mean.clone()).expect("rank-1"),
        );
        rec.insert(
            format!("running.{i}.var"),
            Tensor::new(&[st.var.len()], st.var.clone()).expect("rank-1"),
        );
    }
    put_adam(&mut rec, "adam_g", &s.adam_g);
    put_adam(&mut rec, "adam_d", &s.adam_d);
    rec.insert("rng.latent".into(), bits(s.batcher.sampler.state().to_words()));
    for (d, c) in s.batcher.cursors.iter().enumerate() {
        let (order, pos, rng) = c.parts();
        rec.insert(format!("cursor.{d}.order"), bits(order.iter().map(|&i| i as u64)));
        rec.insert(format!("cursor.{d}.pos"), bits([pos as u64]));
        rec.insert(format!("cursor.{d}.rng"), bits(rng.to_words()));
    }
    rec
}

/// Sample dims and class count are needed to rebuild the networks.
fn meta_text(s: &TrainState) -> Result<String> {
    let dims: Vec<String> = s.model.gen.spec.output_shape()?.batch_dims(1)[1..]
        .iter()
        .map(|d| d.to_string())
        .collect();
    let classes = s.model.cls.as_ref().map(|c| c.classes()).unwrap_or(0);
    Ok(format!(
        "{}#sample_dims {}\n#classes {classes}\n",
        s.config.to_text(),
        dims.join(" ")
    ))
}

pub fn checkpoint_bytes(s: &TrainState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = meta_text(s)?;
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let rec = records(s);
    out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
    for (name, t) in &rec {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(s: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(s)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    parse_checkpoint(&std::fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 text".into()))
    }
}

fn parse_meta(meta: &str) -> Result<(TrainConfig, Vec<usize>, Option<usize>)> {
    let mut config = String::new();
    let (mut dims, mut classes) = (None, None);
    for line in meta.lines() {
        if let Some(rest) = line.strip_prefix("#sample_dims ") {
            let d: std::result::Result<Vec<usize>, _> = rest.split_whitespace().map(str::parse).collect();
            dims = Some(d.map_err(|_| Error::Checkpoint(format!("bad sample dims {rest}")))?);
        } else if let Some(rest) = line.strip_prefix("#classes ") {
            let c: usize = rest
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad class count {rest}")))?;
            classes = Some(c);
        } else {
            config.push_str(line);
            config.push('\n');
        }
    }
    let config = TrainConfig::from_text(&config)?;
    let dims = dims.ok_or_else(|| Error::Checkpoint("missing sample dims".into()))?;
    let classes = classes.ok_or_else(|| Error::Checkpoint("missing class count".into()))?;
    Ok((config, dims, (classes > 0).then_some(classes)))
}

struct Records(BTreeMap<String, Tensor>);

impl Records {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.0
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
    }

    fn take_like(&mut self, name: &str, like: &Tensor) -> Result<Tensor> {
        let t = self.take(name)?;
        if t.shape() != like.shape() {
            return Err(Error::ShapeMismatch {
                op: "load_checkpoint",
                left: like.shape().clone(),
                right: t.shape().clone(),
            });
        }
        Ok(t)
    }

    fn word(&mut self, name: &str) -> Result<u64> {
        match words(&self.take(name)?)[..] {
            [w] => Ok(w),
            _ => Err(Error::Checkpoint(format!("{name} is not a single word"))),
        }
    }

    fn fill_store(&mut self, prefix: &str, s: &mut ParamStore) -> Result<()> {
        for (k, t) in s.iter_mut() {
            *t = self.take_like(&format!("{prefix}{k}"), t)?;
        }
        Ok(())
    }

    fn fill_adam(&mut self, who: &str, a: &mut AdamState) -> Result<()> {
        a.t = self.word(&format!("{who}.t"))?;
        for (k, t) in a.m.iter_mut() {
            *t = self.take_like(&format!("{who}.m.{k}"), t)?;
        }
        for (k, t) in a.v.iter_mut() {
            *t = self.take_like(&format!("{who}.v.{k}"), t)?;
        }
        Ok(())
    }
}

pub fn parse_checkpoint(buf: &[u8]) -> Result<TrainState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.len()?;
    let meta = r.string(n)?;
    let (config, dims, classes) = parse_meta(&meta)?;
    let count = r.len()?;
    let mut rec = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = r.string(n)?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("record {name} too large")))?;
        let bytes = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("record too large".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if rec.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate record {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mut rec = Records(rec);

    let mut model = Model::new(&config, &dims, classes)?;
    rec.fill_store("param.", &mut model.gen.params)?;
    rec.fill_store("param.", &mut model.disc.params)?;
    if let Some(c) = model.cls.as_mut() {
        rec.fill_store("param.", &mut c.params)?;
    }
    for (i, st) in model.gen.running.iter_mut() {
        let like = Tensor::new(&[st.mean.len()], st.mean.clone())?;
        let mean = rec.take_like(&format!("running.{i}.mean"), &like)?.into_data();
        let var = rec.take_like(&format!("running.{i}.var"), &like)?.into_data();
        *st = BatchStats { mean, var };
    }
    let adam = AdamConfig::with_lr(config.lr);
    let mut adam_g = AdamState::new(adam, &[&model.gen.params]);
    let mut d_stores = vec![&model.disc.params];
    d_stores.extend(model.cls.as_ref().map(|c| &c.params));
    let mut adam_d = AdamState::new(adam, &d_stores);
    rec.fill_adam("adam_g", &mut adam_g)?;
    rec.fill_adam("adam_d", &mut adam_d)?;

    let latent = RngState::from_words(&words(&rec.take("rng.latent")?))?;
    let sampler = LatentSampler::restore(config.net.latent_dim, &latent);
    let mut cursors = Vec::with_capacity(2);
    for d in 0..2 {
        let order = words(&rec.take(&format!("cursor.{d}.order"))?)
            .into_iter()
            .map(|w| usize::try_from(w).map_err(|_| Error::Checkpoint("cursor index overflow".into())))
            .collect::<Result<Vec<usize>>>()?;
        let pos = rec.word(&format!("cursor.{d}.pos"))? as usize;
        let rng = RngState::from_words(&words(&rec.take(&format!("cursor.{d}.rng"))?))?;
        cursors.push(ShuffledCursor::from_parts(order, pos, &rng)?);
    }
    let c1 = cursors.pop().expect("two cursors");
    let c0 = cursors.pop().expect("two cursors");
    let iteration = rec.word("state.iteration")?;
    if let Some(extra) = rec.0.keys().next() {
        return Err(Error::ModelMismatch(format!("unexpected record {extra}")));
    }
    Ok(TrainState {
        config,
        model,
        adam_g,
        adam_d,
        batcher: Batcher {
            sampler,
            cursors: [c0, c1],
        },
        iteration,
    })
}
