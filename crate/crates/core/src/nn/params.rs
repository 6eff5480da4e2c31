use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// Named gradients, sorted by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

/// Flat store of trainable tensors keyed by hierarchical names such as
/// `gen.layer0.kernel`. Iteration is sorted by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidShape(format!("parameter {name} registered twice")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.entries
    }

    /// Records every tensor as a graph leaf; `trainable = false` binds them
    /// as constants so no gradient flows into this store.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamStore {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Graph variables for a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl From<BTreeMap<String, Var>> for Bound {
    fn from(vars: BTreeMap<String, Var>) -> Self {
        Bound { vars }
    }
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ModelMismatch(format!("parameter {name} not bound")))
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Merges another binding; names must not collide.
    pub fn extend(&mut self, other: Bound) {
        for (k, v) in other.vars {
            let prev = self.vars.insert(k.clone(), v);
            assert!(prev.is_none(), "parameter {k} bound twice");
        }
    }

    /// Gradients for every bound parameter, keyed by name.
    pub fn collect(&self, grads: &Gradients) -> GradMap {
        self.vars.iter().map(|(k, &v)| (k.clone(), grads.get(v))).collect()
    }

    /// Gradients for the bound parameters whose names start with `prefix`.
    pub fn collect_prefixed(&self, grads: &Gradients, prefix: &str) -> GradMap {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, &v)| (k.clone(), grads.get(v)))
            .collect()
    }
}
