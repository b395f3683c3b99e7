use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, Tensor};

const VAR_EPS: f64 = 1e-8;
/// Pseudo-count of the unit-variance prior, so early transforms stay bounded.
const PRIOR_COUNT: f64 = 1e-4;

/// Per-dimension running mean and variance of raw observations.
#[derive(Debug, Clone)]
pub struct ObsNormalizer {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: f64,
    frozen: bool,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: PRIOR_COUNT,
            frozen: false,
        }
    }

    /// A frozen normalizer with the given statistics.
    pub fn from_stats(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("mean and variance lengths differ"));
        }
        if var.iter().any(|v| !(*v >= 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("normalizer statistics must be finite with nonnegative variance"));
        }
        Ok(Self {
            mean,
            var,
            count: 0.0,
            frozen: true,
        })
    }

    /// Leaves raw observations unchanged.
    pub fn identity(dim: usize) -> Self {
        Self::from_stats(vec![0.0; dim], vec![1.0 - VAR_EPS; dim]).expect("valid statistics")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Merges one observation into the statistics. Ignored once frozen.
    pub fn observe(&mut self, s: &[f64]) -> Result<()> {
        if s.len() != self.dim() {
            return Err(Error::shape(format!("observation has {} entries, expected {}", s.len(), self.dim())));
        }
        if self.frozen {
            return Ok(());
        }
        let total = self.count + 1.0;
        for ((m, v), &x) in self.mean.iter_mut().zip(self.var.iter_mut()).zip(s) {
            let delta = x - *m;
            let new_mean = *m + delta / total;
            let m2 = *v * self.count + delta * delta * self.count / total;
            *m = new_mean;
            *v = m2 / total;
        }
        self.count = total;
        Ok(())
    }

    /// `(s - mean) / sqrt(var + 1e-8)`.
    pub fn transform(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.dim() {
            return Err(Error::shape(format!("observation has {} entries, expected {}", s.len(), self.dim())));
        }
        Ok(s.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((x, m), v)| (x - m) / (v + VAR_EPS).sqrt())
            .collect())
    }

    /// Statistics and frozen flag; the sample count is not compared.
    fn key(&self) -> (&[f64], &[f64], bool) {
        (&self.mean, &self.var, self.frozen)
    }

    pub fn write_into(&self, ck: &mut Checkpoint) -> Result<()> {
        ck.push("obs_norm.mean", Tensor::vector(self.mean.clone())?)?;
        ck.push("obs_norm.var", Tensor::vector(self.var.clone())?)?;
        Ok(())
    }

    /// Reads the statistics written by [`ObsNormalizer::write_into`]; the result is frozen.
    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let get = |name: &str| ck.get(name).map(|t| t.data().to_vec());
        Self::from_stats(get("obs_norm.mean")?, get("obs_norm.var")?)
    }
}

impl PartialEq for ObsNormalizer {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
