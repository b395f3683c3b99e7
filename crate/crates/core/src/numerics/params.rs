use indexmap::IndexMap;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors with insertion-ordered iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

/// Graph leaves created for each parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::usage(format!("duplicate parameter id {name:?}")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn at(&self, index: usize) -> &Tensor {
        &self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds every parameter to `g` as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.params.values().map(|t| g.leaf(t.clone())).collect(),
        }
    }

    /// Accumulates the gradient of every bound parameter; parameters the
    /// output does not depend on receive zeros.
    pub fn absorb(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        for (t, &v) in self.params.values_mut().zip(&bound.vars) {
            let g = grads.get_or_zeros(v, t.len());
            t.accumulate_grad(&g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Rescales all gradients so their joint l2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let total: f64 = self
            .params
            .values()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if total > max_norm {
            let k = max_norm / (total + 1e-12);
            for t in self.params.values_mut() {
                if let Some(g) = t.take_grad() {
                    let scaled: Vec<f64> = g.iter().map(|v| v * k).collect();
                    t.accumulate_grad(&scaled).expect("same length");
                }
            }
        }
        total
    }

    /// Copies values (not gradients) from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::shape("parameter stores differ in size"));
        }
        for ((na, a), (nb, b)) in self.params.iter_mut().zip(other.params.iter()) {
            if na != nb || a.shape() != b.shape() {
                return Err(Error::shape(format!("parameter {na:?} does not match {nb:?}")));
            }
            a.data_mut().copy_from_slice(b.data());
        }
        Ok(())
    }
}
