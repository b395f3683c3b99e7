use rand::Rng;

use crate::error::{Error, Result};
use crate::lnn::SortNetPolicy;
use crate::numerics::{hinge_row, lse, Bound, Graph, Var};

fn check_action(a: usize, n: usize) -> Result<()> {
    if a >= n {
        return Err(Error::domain(format!("action {a} out of range for {n} actions")));
    }
    Ok(())
}

/// `log Σ exp(μ z) − μ z[a]`.
pub fn ce_loss(z: &[f64], a: usize, mu: f64) -> Result<f64> {
    check_action(a, z.len())?;
    let scaled: Vec<f64> = z.iter().map(|v| mu * v).collect();
    Ok(lse(&scaled) - scaled[a])
}

/// Hinge on the lead of `z[y]`: zero when `y` is not the top score or
/// already leads by more than `theta`, else `max_{i≠y} z_i − z_y`.
pub fn rob_loss(z: &[f64], theta: f64, y: usize) -> Result<f64> {
    check_action(y, z.len())?;
    if z.len() < 2 {
        return Err(Error::domain("the robustness loss needs at least two actions"));
    }
    if !(theta > 0.0) {
        return Err(Error::domain(format!("hinge threshold must be positive, got {theta}")));
    }
    Ok(hinge_row(z, y, theta).0)
}

/// `λ(t) = λ0 (λT / λ0)^(t / n_iter)`.
pub fn lambda_at(t: usize, lambda_start: f64, lambda_end: f64, n_iter: usize) -> f64 {
    if n_iter == 0 || t >= n_iter {
        return lambda_end;
    }
    if t == 0 || lambda_start == 0.0 {
        return lambda_start;
    }
    lambda_start * (lambda_end / lambda_start).powf(t as f64 / n_iter as f64)
}

/// Nodes of one recorded composite loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    /// Raw scores `[B, |A|]`.
    pub scores: Var,
    pub ce: Var,
    pub rob: Var,
    pub total: Var,
}

/// Records `λ · mean(CE(μ z, a*)) + mean(L_rob(z, θ, a*))` for a batch.
///
/// The scale `μ` enters only the cross-entropy; the hinge sees raw scores.
/// `policy` should be in Train mode, which updates its running means.
#[allow(clippy::too_many_arguments)]
pub fn record_total_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    policy: &mut SortNetPolicy,
    bound: &Bound,
    x: Var,
    actions: &[usize],
    lambda: f64,
    theta: f64,
    p: f64,
    rng: &mut R,
) -> Result<LossNodes> {
    if actions.is_empty() {
        return Err(Error::usage("the loss needs a nonempty batch"));
    }
    if !(theta > 0.0) {
        return Err(Error::domain(format!("hinge threshold must be positive, got {theta}")));
    }
    let scores = policy.forward_train(g, x, bound, p, rng)?;
    let mu = bound.var(policy.mu_index());
    let scaled = g.scale_by(scores, mu)?;
    let lse = g.log_sum_exp(scaled)?;
    let picked = g.pick(scaled, actions)?;
    let ce_rows = g.sub(lse, picked)?;
    let ce = g.mean(ce_rows)?;
    let rob_rows = g.margin_hinge(scores, actions, theta)?;
    let rob = g.mean(rob_rows)?;
    let weighted = g.mul_const(ce, lambda)?;
    let total = g.add(weighted, rob)?;
    Ok(LossNodes { scores, ce, rob, total })
}

/// Value of the composite loss on a batch. Runs in the policy's current mode.
pub fn total_loss<R: Rng + ?Sized>(
    policy: &mut SortNetPolicy,
    states: &[f64],
    actions: &[usize],
    lambda: f64,
    theta: f64,
    p: f64,
    rng: &mut R,
) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::usage("the loss needs a nonempty batch"));
    }
    let mut g = Graph::new();
    let d = policy.config().input_dim;
    let x = g.leaf(crate::numerics::Tensor::matrix(actions.len(), d, states.to_vec())?);
    let bound = policy.params().bind(&mut g);
    let nodes = record_total_loss(&mut g, policy, &bound, x, actions, lambda, theta, p, rng)?;
    Ok(g.value(nodes.total).data()[0])
}
