use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{dot, Bound, Graph, ParamStore, Tensor, Var};
use crate::rng::stream;
use crate::scorer::Scorer;

/// Fully connected ReLU network with one output per action.
///
/// With no hidden layers it is an affine scorer.
#[derive(Debug, Clone)]
pub struct QNetwork {
    dims: Vec<usize>,
    params: ParamStore,
}

impl QNetwork {
    /// Weights and biases drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(input_dim: usize, hidden: &[usize], num_actions: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_actions);
        if dims.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if num_actions < 2 {
            return Err(Error::Config("a policy needs at least two actions".into()));
        }
        let mut rng = stream(seed);
        let mut params = ParamStore::new();
        for (l, w) in dims.windows(2).enumerate() {
            let (d_in, d_out) = (w[0], w[1]);
            let bound = 1.0 / (d_in as f64).sqrt();
            let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
            let weight = Tensor::matrix(d_out, d_in, draw(d_out * d_in))?;
            let bias = Tensor::vector(draw(d_out))?;
            params.insert(format!("l{l}.weight"), weight)?;
            params.insert(format!("l{l}.bias"), bias)?;
        }
        Ok(Self { dims, params })
    }

    /// An affine scorer `z = W s + b` with the given row-major weight.
    pub fn affine(num_actions: usize, input_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let mut params = ParamStore::new();
        params.insert("l0.weight", Tensor::matrix(num_actions, input_dim, weight)?)?;
        params.insert("l0.bias", Tensor::vector(bias)?)?;
        if params.at(1).len() != num_actions {
            return Err(Error::shape("bias length must equal the action count"));
        }
        Ok(Self {
            dims: vec![input_dim, num_actions],
            params,
        })
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Q-values for a `[batch, input_dim]` row-major block.
    pub fn forward_batch(&self, states: &[f64]) -> Result<Vec<f64>> {
        let d_in = self.dims[0];
        if d_in == 0 || !states.len().is_multiple_of(d_in) {
            return Err(Error::shape(format!("{} values do not form rows of width {d_in}", states.len())));
        }
        let batch = states.len() / d_in;
        let mut h = states.to_vec();
        for l in 0..self.layers() {
            let (a, b) = (self.dims[l], self.dims[l + 1]);
            let w = self.params.at(2 * l).data();
            let bias = self.params.at(2 * l + 1).data();
            let mut next = Vec::with_capacity(batch * b);
            for r in 0..batch {
                let row = &h[r * a..(r + 1) * a];
                for o in 0..b {
                    let v = bias[o] + dot(&w[o * a..(o + 1) * a], row);
                    next.push(if l + 1 < self.layers() { v.max(0.0) } else { v });
                }
            }
            h = next;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q-values"));
        }
        Ok(h)
    }

    /// Records the network with parameters bound as graph leaves.
    pub fn record_bound(&self, g: &mut Graph, x: Var, bound: &Bound) -> Result<Var> {
        let mut h = x;
        for l in 0..self.layers() {
            h = g.affine(h, bound.var(2 * l), bound.var(2 * l + 1))?;
            if l + 1 < self.layers() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

impl Scorer for QNetwork {
    fn input_dim(&self) -> usize {
        self.dims[0]
    }

    fn num_actions(&self) -> usize {
        *self.dims.last().expect("nonempty")
    }

    fn scores(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "state has {} entries, network expects {}",
                s.len(),
                self.input_dim()
            )));
        }
        self.forward_batch(s)
    }

    fn record(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let bound = self.params.bind(g);
        self.record_bound(g, x, &bound)
    }
}
