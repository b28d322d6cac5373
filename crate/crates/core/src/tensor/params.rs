use std::collections::BTreeMap;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Named, ordered set of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

/// Parameters of a [`ParamSet`] recorded as leaves on one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::usage(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor.with_requires_grad(true)));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            vars: self.entries.iter().map(|(_, t)| g.leaf(t)).collect(),
            index: self.index.clone(),
        }
    }

    /// Copy gradients computed on `g` into each tensor's grad slot.
    pub fn pull_grads(&mut self, g: &Graph, bound: &BoundParams) -> Result<()> {
        for ((_, t), &v) in self.entries.iter_mut().zip(&bound.vars) {
            let grad = g.grad(v).map(<[f32]>::to_vec);
            t.set_grad(grad)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.grad = None;
        }
    }

    /// Drop gradient slots, keeping only values (for snapshots).
    pub fn without_grads(&self) -> ParamSet {
        let mut p = self.clone();
        p.zero_grads();
        p
    }
}
