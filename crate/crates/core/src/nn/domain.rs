use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Number of domains; also the width of the one-hot encoding.
pub const DOMAINS: usize = 2;

/// Domain variable: 0 is the source domain, 1 the target domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainVar(u8);

impl DomainVar {
    pub const SOURCE: DomainVar = DomainVar(0);
    pub const TARGET: DomainVar = DomainVar(1);
    pub const BOTH: [DomainVar; 2] = [DomainVar::SOURCE, DomainVar::TARGET];

    pub fn new(id: usize) -> Result<Self> {
        match id {
            0 | 1 => Ok(DomainVar(id as u8)),
            _ => Err(Error::InvalidShape(format!("domain id {id} not in {{0, 1}}"))),
        }
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn one_hot(self) -> [f64; DOMAINS] {
        let mut v = [0.0; DOMAINS];
        v[self.id()] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InjectKind {
    Dense,
    Conv,
}

/// Appends the one-hot encoding of `d` to `x`: as two trailing feature
/// columns for rank-2 input, or as two constant channels for rank-4 input.
/// Existing values are untouched.
pub fn inject_domain(g: &mut Graph, x: Var, d: DomainVar, kind: InjectKind) -> Result<Var> {
    let b = g.shape(x).dims().first().copied().unwrap_or(0);
    inject_domains(g, x, &vec![d; b], kind)
}

/// Like [`inject_domain`] with one domain per sample.
pub fn inject_domains(g: &mut Graph, x: Var, ds: &[DomainVar], kind: InjectKind) -> Result<Var> {
    let dims = g.shape(x).dims().to_vec();
    let extra = match (kind, dims.as_slice()) {
        (InjectKind::Dense, &[b, _]) if b == ds.len() => {
            let data = ds.iter().flat_map(|d| d.one_hot()).collect();
            Tensor::new(&[b, DOMAINS], data)?
        }
        (InjectKind::Conv, &[b, _, h, w]) if b == ds.len() => {
            let mut data = Vec::with_capacity(b * DOMAINS * h * w);
            for d in ds {
                for c in d.one_hot() {
                    data.extend(std::iter::repeat_n(c, h * w));
                }
            }
            Tensor::new(&[b, DOMAINS, h, w], data)?
        }
        (kind, _) => {
            return Err(Error::Unsupported(format!(
                "{kind:?} injection of {} domain codes into {}",
                ds.len(),
                g.shape(x)
            )))
        }
    };
    let e = g.constant(extra);
    g.concat(&[x, e], 1)
}

/// Injects one domain into a forward pass, at most once per layer.
pub(crate) struct DomainInjector {
    domains: Vec<DomainVar>,
    done: BTreeSet<usize>,
}

impl DomainInjector {
    pub fn new(domains: Vec<DomainVar>) -> Self {
        DomainInjector {
            domains,
            done: BTreeSet::new(),
        }
    }

    pub fn inject(&mut self, g: &mut Graph, x: Var, layer: usize) -> Result<Var> {
        if !self.done.insert(layer) {
            return Err(Error::DoubleInjection(format!("layer {layer}")));
        }
        let kind = if g.shape(x).rank() == 4 {
            InjectKind::Conv
        } else {
            InjectKind::Dense
        };
        inject_domains(g, x, &self.domains, kind)
    }
}
