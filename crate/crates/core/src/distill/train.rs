use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{lambda_at, record_total_loss};
use crate::adversary::csv_err;
use crate::error::{Error, Result};
use crate::lnn::{ForwardMode, Mode, SortNetConfig, SortNetPolicy};
use crate::numerics::{adamw_step, AdamWConfig, AdamWState, Graph, Tensor};
use crate::rng::{derive_seed, stream};
use crate::scorer::{argmax, Margin};
use crate::teacher::ExpertDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Perturbation budget the student is trained for.
    pub eps: f64,
    /// Hinge threshold in raw score units; `None` means `2 · eps`.
    pub theta: Option<f64>,
    pub lambda_start: f64,
    pub lambda_end: f64,
    /// Optimizer steps.
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden_widths: Vec<usize>,
    pub rho: f64,
    pub forward_mode: ForwardMode,
    pub p_start: f64,
    pub p_end: f64,
    pub p_ramp_fraction: f64,
    pub norm_momentum: f64,
    /// Stop once the smoothed batch agreement has not improved for this
    /// many steps; zero disables early stopping.
    pub early_stop_patience: usize,
    /// Checkpoint period in steps; zero disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let net = SortNetConfig::classic_control(1, 2);
        Self {
            eps: 0.1,
            theta: None,
            lambda_start: 1.0,
            lambda_end: 0.1,
            iterations: 20_000,
            batch_size: 512,
            lr: 0.02,
            weight_decay: 0.02,
            hidden_widths: net.hidden_widths,
            rho: net.rho,
            forward_mode: net.forward_mode,
            p_start: net.p_start,
            p_end: net.p_end,
            p_ramp_fraction: net.p_ramp_fraction,
            norm_momentum: net.norm_momentum,
            early_stop_patience: 0,
            checkpoint_every: 0,
        }
    }
}

impl DistillConfig {
    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or(2.0 * self.eps)
    }

    pub fn network(&self, input_dim: usize, num_actions: usize) -> SortNetConfig {
        SortNetConfig {
            input_dim,
            num_actions,
            hidden_widths: self.hidden_widths.clone(),
            rho: self.rho,
            forward_mode: self.forward_mode,
            p_start: self.p_start,
            p_end: self.p_end,
            p_ramp_fraction: self.p_ramp_fraction,
            norm_momentum: self.norm_momentum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta() > 0.0) {
            return Err(Error::Config(format!("hinge threshold must be positive, got {}", self.theta())));
        }
        if !(self.lambda_end >= 0.0 && self.lambda_start >= self.lambda_end) || !self.lambda_start.is_finite() {
            return Err(Error::Config(format!(
                "lambda schedule needs 0 <= lambda_end <= lambda_start, got {} -> {}",
                self.lambda_start, self.lambda_end
            )));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be positive and weight_decay nonnegative".into()));
        }
        self.network(1, 2).validate()
    }
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub ce: f64,
    pub rob: f64,
    pub lambda: f64,
    pub p: f64,
    /// Fraction of the batch whose raw-score margin is at least θ.
    pub margin_frac: f64,
    /// Fraction of the batch where the student's argmax equals the teacher action.
    pub agree_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// `iteration,ce,rob,lambda,p,margin_frac,agree_rate`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAIN_LOG_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r.record()).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const TRAIN_LOG_HEADER: [&str; 7] = ["iteration", "ce", "rob", "lambda", "p", "margin_frac", "agree_rate"];

impl TrainLogRow {
    pub fn record(&self) -> [String; 7] {
        [
            self.iteration.to_string(),
            self.ce.to_string(),
            self.rob.to_string(),
            self.lambda.to_string(),
            self.p.to_string(),
            self.margin_frac.to_string(),
            self.agree_rate.to_string(),
        ]
    }
}

/// Trains a sort-network student on `dataset`. See [`distill_train_with`].
pub fn distill_train(dataset: &ExpertDataset, config: &DistillConfig, seed: u64) -> Result<(SortNetPolicy, TrainLog)> {
    distill_train_with(dataset, config, seed, |_, _| Ok(()))
}

/// Minimizes the composite loss with AdamW over shuffled mini-batches.
///
/// Each pass over the data uses a fresh permutation; a trailing partial
/// batch is skipped. `on_step` sees every log row with the policy after
/// the update. The result is in Eval mode.
pub fn distill_train_with(
    dataset: &ExpertDataset,
    config: &DistillConfig,
    seed: u64,
    mut on_step: impl FnMut(&TrainLogRow, &SortNetPolicy) -> Result<()>,
) -> Result<(SortNetPolicy, TrainLog)> {
    config.validate().map_err(|e| Error::usage(e.to_string()))?;
    if dataset.is_empty() {
        return Err(Error::usage("cannot distill from an empty dataset"));
    }
    dataset.validate()?;
    let net = config.network(dataset.obs_dim, dataset.num_actions);
    let mut policy = SortNetPolicy::new(net, derive_seed(seed, "student-init", 0))?;
    policy.set_mode(Mode::Train);
    let mut opt = AdamWState::new(
        policy.params(),
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let theta = config.theta();
    let batch = config.batch_size.min(dataset.len());
    let d = dataset.obs_dim;
    let mut shuffle = stream(derive_seed(seed, "shuffle", 0));
    let mut noise = stream(derive_seed(seed, "estimator", 0));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();
    let mut log = TrainLog::default();
    let mut best_agree = f64::NEG_INFINITY;
    let mut smoothed: Option<f64> = None;
    let mut since_best = 0;
    for it in 0..config.iterations {
        if cursor + batch > order.len() {
            order.shuffle(&mut shuffle);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let mut states = Vec::with_capacity(batch * d);
        let mut actions = Vec::with_capacity(batch);
        for &i in idx {
            states.extend_from_slice(dataset.state(i));
            actions.push(dataset.actions[i]);
        }
        let lambda = lambda_at(it, config.lambda_start, config.lambda_end, config.iterations);
        let p = policy.config().p_at(it, config.iterations);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(batch, d, states)?);
        let bound = policy.params().bind(&mut g);
        let nodes = record_total_loss(&mut g, &mut policy, &bound, x, &actions, lambda, theta, p, &mut noise)?;
        let grads = g.backward(nodes.total)?;
        policy.params_mut().absorb(&grads, &bound)?;
        adamw_step(policy.params_mut(), &mut opt)?;

        let z = g.value(nodes.scores).data();
        let a = dataset.num_actions;
        let (mut agree, mut wide) = (0usize, 0usize);
        for (r, &y) in actions.iter().enumerate() {
            let row = &z[r * a..(r + 1) * a];
            agree += usize::from(argmax(row) == y);
            wide += usize::from(Margin::of(row)?.value >= theta);
        }
        let row = TrainLogRow {
            iteration: it,
            ce: g.value(nodes.ce).data()[0],
            rob: g.value(nodes.rob).data()[0],
            lambda,
            p,
            margin_frac: wide as f64 / batch as f64,
            agree_rate: agree as f64 / batch as f64,
        };
        on_step(&row, &policy)?;
        let agree_rate = row.agree_rate;
        log.rows.push(row);

        if config.early_stop_patience > 0 {
            let s = smoothed.map_or(agree_rate, |s| 0.95 * s + 0.05 * agree_rate);
            smoothed = Some(s);
            if s > best_agree + 1e-4 {
                best_agree = s;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    policy.set_mode(Mode::Eval);
    Ok((policy, log))
}
