use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{contraction_weights, ForwardMode, Mode, SortNetConfig};
use crate::error::{Error, Result};
use crate::numerics::{effective_len, Bound, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::rng::stream;
use crate::scorer::Scorer;

const CONFIG_ENTRY: &str = "__config__";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasInit {
    /// Standard Gaussian biases.
    Gaussian,
    Zero,
}

/// Running means of the intermediate layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub running_means: Vec<Vec<f64>>,
    pub momentum: f64,
    pub mode: Mode,
    pub last_batch_means: Vec<Vec<f64>>,
}

impl NormState {
    fn new(config: &SortNetConfig) -> Self {
        let means: Vec<Vec<f64>> = config.hidden_widths.iter().map(|&w| vec![0.0; w]).collect();
        Self {
            running_means: means.clone(),
            momentum: config.norm_momentum,
            mode: Mode::Train,
            last_batch_means: means,
        }
    }

    fn update(&mut self, layer: usize, batch_mean: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.running_means[layer].iter_mut().zip(batch_mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        self.last_batch_means[layer] = batch_mean.to_vec();
    }
}

/// A sort network scoring actions, with mean normalization between layers
/// and a learnable cross-entropy scale `mu`.
///
/// Layer `l` unit `k` computes `ω ᵀ sort_desc(|x + b_k|)`. The score vector
/// is `-(x_M + b_out)`; `mu` only enters the training loss.
#[derive(Debug, Clone)]
pub struct SortNetPolicy {
    config: SortNetConfig,
    params: ParamStore,
    norm: NormState,
    weights: Vec<Arc<[f64]>>,
}

fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

impl SortNetPolicy {
    pub fn new(config: SortNetConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, seed, BiasInit::Gaussian)
    }

    pub fn with_init(config: SortNetConfig, seed: u64, init: BiasInit) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed);
        let mut params = ParamStore::new();
        for (l, (d_in, d_out)) in config.layer_shapes().into_iter().enumerate() {
            let data = match init {
                BiasInit::Gaussian => (0..d_in * d_out).map(|_| rng.sample(StandardNormal)).collect(),
                BiasInit::Zero => vec![0.0; d_in * d_out],
            };
            params.insert(bias_name(l), Tensor::matrix(d_out, d_in, data)?)?;
        }
        params.insert("out.bias", Tensor::zeros(vec![config.num_actions]))?;
        params.insert("mu", Tensor::scalar(1.0)?)?;
        let weights = config
            .layer_shapes()
            .iter()
            .map(|&(d_in, _)| Arc::from(contraction_weights(config.rho, d_in)))
            .collect();
        let norm = NormState::new(&config);
        Ok(Self {
            config,
            params,
            norm,
            weights,
        })
    }

    pub fn config(&self) -> &SortNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn norm(&self) -> &NormState {
        &self.norm
    }

    pub fn mode(&self) -> Mode {
        self.norm.mode
    }

    /// Eval freezes the running means; Train updates them on every batch.
    pub fn set_mode(&mut self, mode: Mode) {
        self.norm.mode = mode;
    }

    pub fn mu(&self) -> f64 {
        self.params.get("mu").expect("mu is always present").data()[0]
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    fn bias(&self, layer: usize) -> &Tensor {
        self.params.get(&bias_name(layer)).expect("layer biases are always present")
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n != self.config.input_dim {
            return Err(Error::shape(format!(
                "policy expects {} inputs, got {n}",
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Exact layer output before normalization.
    pub fn raw_layer_output(&self, x: &[f64], layer: usize) -> Result<Vec<f64>> {
        let (d_in, d_out) = *self
            .config
            .layer_shapes()
            .get(layer)
            .ok_or_else(|| Error::shape(format!("no layer {layer}")))?;
        if x.len() != d_in {
            return Err(Error::shape(format!("layer {layer} expects {d_in} inputs, got {}", x.len())));
        }
        let mut out = vec![0.0; d_out];
        let mut buf = Vec::with_capacity(d_in);
        unit_outputs(x, self.bias(layer).data(), &self.weights[layer], &mut buf, &mut out);
        Ok(out)
    }

    /// One layer over a row-major batch, normalized according to the
    /// current mode. Train mode subtracts the batch mean and updates the
    /// running mean; Eval subtracts the frozen running mean. The output
    /// layer is never normalized.
    pub fn layer_forward<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        batch: usize,
        layer: usize,
        mode: ForwardMode,
        p: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (d_in, _) = *self
            .config
            .layer_shapes()
            .get(layer)
            .ok_or_else(|| Error::shape(format!("no layer {layer}")))?;
        if batch == 0 || x.len() != batch * d_in {
            return Err(Error::shape(format!("layer {layer}: {} values for {batch} rows of {d_in}", x.len())));
        }
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::matrix(batch, d_in, x.to_vec())?);
        let bias = g.leaf(self.bias(layer).clone());
        let y = self.layer_on_graph(&mut g, xv, bias, layer, mode, p, rng)?;
        Ok(g.value(y).data().to_vec())
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_on_graph<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph,
        x: Var,
        bias: Var,
        layer: usize,
        mode: ForwardMode,
        p: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let y = match mode {
            ForwardMode::Exact => g.sortnet_layer(x, bias, self.weights[layer].clone())?,
            ForwardMode::Stochastic => g.bernoulli_layer(x, bias, self.config.rho, p, rng)?,
        };
        if layer + 1 == self.config.layer_count() {
            return Ok(y);
        }
        match self.norm.mode {
            Mode::Train => {
                let (rows, cols) = g.value(y).as_rows()?;
                let data = g.value(y).data();
                let mut mean = vec![0.0; cols];
                for r in 0..rows {
                    mean.iter_mut().zip(&data[r * cols..(r + 1) * cols]).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                self.norm.update(layer, &mean);
                g.center_columns(y)
            }
            Mode::Eval => {
                let neg: Vec<f64> = self.norm.running_means[layer].iter().map(|m| -m).collect();
                let shift = g.vector(&neg)?;
                g.add_row(y, shift)
            }
        }
    }

    /// Training forward pass over a batch `[B, input_dim]` using the
    /// configured forward mode. Returns the raw score node `[B, |A|]`.
    ///
    /// Parameters must have been bound with [`ParamStore::bind`] on `g`.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph,
        x: Var,
        bound: &Bound,
        p: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let (_, cols) = g.value(x).as_rows()?;
        self.check_input(cols)?;
        let mode = self.config.forward_mode;
        let mut h = x;
        for l in 0..self.config.layer_count() {
            let bias = bound.var(l);
            h = self.layer_on_graph(g, h, bias, l, mode, p, rng)?;
        }
        let out_bias = bound.var(self.config.layer_count());
        let shifted = g.add_row(h, out_bias)?;
        g.neg(shifted)
    }

    /// Index of `mu` in the parameter store, for binding lookups.
    pub fn mu_index(&self) -> usize {
        self.params.index_of("mu").expect("mu is always present")
    }

    /// Exact scores for a row-major batch of observations using the
    /// running means, independent of the current mode.
    pub fn scores_batch(&self, states: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.input_dim;
        if !states.len().is_multiple_of(d) {
            return Err(Error::shape(format!("{} values is not a whole number of {d}-dim states", states.len())));
        }
        let a = self.config.num_actions;
        let mut out = Vec::with_capacity(states.len() / d * a);
        let mut scratch = Scratch::default();
        for s in states.chunks(d) {
            out.extend(self.exact_scores(s, &mut scratch));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SortNetPolicy::scores"));
        }
        Ok(out)
    }

    fn exact_scores(&self, s: &[f64], scratch: &mut Scratch) -> Vec<f64> {
        let shapes = self.config.layer_shapes();
        let last = shapes.len() - 1;
        scratch.cur.clear();
        scratch.cur.extend_from_slice(s);
        for (l, &(_, d_out)) in shapes.iter().enumerate() {
            scratch.next.clear();
            scratch.next.resize(d_out, 0.0);
            unit_outputs(&scratch.cur, self.bias(l).data(), &self.weights[l], &mut scratch.buf, &mut scratch.next);
            if l < last {
                for (v, m) in scratch.next.iter_mut().zip(&self.norm.running_means[l]) {
                    *v += -m;
                }
            }
            std::mem::swap(&mut scratch.cur, &mut scratch.next);
        }
        let out_bias = self.params.get("out.bias").expect("present").data();
        scratch.cur.iter().zip(out_bias).map(|(x, b)| -(x + b)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Config header first, then parameters, then running means.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let c = &self.config;
        let mut header = vec![c.layer_count() as f64];
        header.extend(c.layer_shapes().iter().map(|&(_, w)| w as f64));
        header.extend([c.rho, c.input_dim as f64, c.num_actions as f64, c.norm_momentum]);
        let mut ck = Checkpoint::new();
        ck.push(CONFIG_ENTRY, Tensor::vector(header)?)?;
        ck.extend_from("", &self.params)?;
        for (l, m) in self.norm.running_means.iter().enumerate() {
            ck.push(format!("norm.layer{l}.running_mean"), Tensor::vector(m.clone())?)?;
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Rebuilds a policy in Eval mode with exact forward.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let header = ck.get(CONFIG_ENTRY)?.data();
        let bad = || Error::Format("malformed sort network config header".into());
        let layers = *header.first().ok_or_else(bad)? as usize;
        if layers == 0 || header.len() != 1 + layers + 4 {
            return Err(bad());
        }
        let widths: Vec<usize> = header[1..1 + layers].iter().map(|&w| w as usize).collect();
        let tail = &header[1 + layers..];
        let mut config = SortNetConfig::new(tail[1] as usize, tail[2] as usize, widths[..layers - 1].to_vec());
        config.rho = tail[0];
        config.norm_momentum = tail[3];
        if widths[layers - 1] != config.num_actions {
            return Err(bad());
        }
        let mut policy = Self::with_init(config, 0, BiasInit::Zero)?;
        ck.restore_into("", &mut policy.params)?;
        for (l, m) in policy.norm.running_means.iter_mut().enumerate() {
            let src = ck.get(&format!("norm.layer{l}.running_mean"))?;
            if src.len() != m.len() {
                return Err(bad());
            }
            m.copy_from_slice(src.data());
        }
        policy.set_mode(Mode::Eval);
        Ok(policy)
    }
}

#[derive(Default)]
struct Scratch {
    cur: Vec<f64>,
    next: Vec<f64>,
    buf: Vec<u64>,
}

/// `out[k] = ω ᵀ sort_desc(|x + b_k|)`; summation order matches the graph op.
///
/// Absolute values are nonnegative, so their bit patterns order like the
/// values and the selection runs on integers.
fn unit_outputs(x: &[f64], bias: &[f64], w: &[f64], buf: &mut Vec<u64>, out: &mut [f64]) {
    let d_in = x.len();
    let k_eff = effective_len(w);
    for (k, o) in out.iter_mut().enumerate() {
        let bk = &bias[k * d_in..(k + 1) * d_in];
        buf.clear();
        buf.extend(x.iter().zip(bk).map(|(a, b)| (a + b).abs().to_bits()));
        if k_eff > 0 && k_eff < buf.len() {
            buf.select_nth_unstable_by(k_eff - 1, |a, b| b.cmp(a));
            buf.truncate(k_eff);
        }
        buf.sort_unstable_by(|a, b| b.cmp(a));
        let mut acc = 0.0;
        for (wi, v) in w.iter().zip(buf.iter()) {
            acc += wi * f64::from_bits(*v);
        }
        *o = acc;
    }
}

impl Scorer for SortNetPolicy {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn num_actions(&self) -> usize {
        self.config.num_actions
    }

    fn certifiable(&self) -> bool {
        self.mode() == Mode::Eval
    }

    /// Exact scores using the frozen running means.
    fn scores(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s.len())?;
        self.scores_batch(s)
    }

    /// Exact, Eval-normalized score graph with parameters as constants.
    fn record(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, cols) = g.value(x).as_rows()?;
        self.check_input(cols)?;
        let last = self.config.layer_count() - 1;
        let mut h = x;
        for l in 0..=last {
            let bias = g.leaf(self.bias(l).clone());
            h = g.sortnet_layer(h, bias, self.weights[l].clone())?;
            if l < last {
                let neg: Vec<f64> = self.norm.running_means[l].iter().map(|m| -m).collect();
                let shift = g.vector(&neg)?;
                h = g.add_row(h, shift)?;
            }
        }
        let out_bias = g.leaf(self.params.get("out.bias").expect("present").clone());
        let shifted = g.add_row(h, out_bias)?;
        g.neg(shifted)
    }
}
