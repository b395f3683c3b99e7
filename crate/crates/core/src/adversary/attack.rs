use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sign0, Graph};
use crate::rng::{derive_seed, stream};
use crate::scorer::{argmax, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    Pgd,
    #[serde(rename = "rifgsm")]
    RiFgsm,
    #[serde(rename = "rifgsm_multi")]
    RiFgsmMulti,
}

impl AttackFamily {
    pub fn tag(self) -> &'static str {
        match self {
            AttackFamily::Pgd => "pgd",
            AttackFamily::RiFgsm => "rifgsm",
            AttackFamily::RiFgsmMulti => "rifgsm_multi",
        }
    }
}

impl std::str::FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(AttackFamily::Pgd),
            "rifgsm" => Ok(AttackFamily::RiFgsm),
            "rifgsm_multi" => Ok(AttackFamily::RiFgsmMulti),
            other => Err(Error::Config(format!(
                "unknown attack family {other:?}; expected one of pgd, rifgsm, rifgsm_multi"
            ))),
        }
    }
}

/// An l∞ observation attacker.
///
/// The step size is stored relative to the budget (`η = step_ratio · ε`) so
/// one template serves a whole ε sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub family: AttackFamily,
    pub eps: f64,
    pub steps: usize,
    pub step_ratio: f64,
    /// Fresh random starts for the multi-start variant.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::pgd(0.1)
    }
}

impl AttackConfig {
    /// `K = 10`, `η = ε / 10`.
    pub fn pgd(eps: f64) -> Self {
        Self {
            family: AttackFamily::Pgd,
            eps,
            steps: 10,
            step_ratio: 0.1,
            restarts: 1,
            seed: 0,
        }
    }

    /// One full-budget step from a uniform random start.
    pub fn ri_fgsm(eps: f64) -> Self {
        Self {
            family: AttackFamily::RiFgsm,
            eps,
            steps: 1,
            step_ratio: 1.0,
            restarts: 1,
            seed: 0,
        }
    }

    pub fn ri_fgsm_multi(eps: f64, restarts: usize) -> Self {
        Self {
            family: AttackFamily::RiFgsmMulti,
            restarts,
            ..Self::ri_fgsm(eps)
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn step_size(&self) -> f64 {
        self.step_ratio * self.eps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::domain(format!("attack budget must be a finite nonnegative number, got {}", self.eps)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        if !(self.step_ratio > 0.0) || !self.step_ratio.is_finite() {
            return Err(Error::Config(format!("step_ratio must be positive, got {}", self.step_ratio)));
        }
        if self.family == AttackFamily::RiFgsmMulti && self.restarts == 0 {
            return Err(Error::Config("the multi-start attack needs at least one restart".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub perturbed: Vec<f64>,
    pub clean_action: usize,
    pub attacked_action: usize,
    pub flipped: bool,
    /// Cross-entropy of the raw scores against the clean action.
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Clamps `x` into the box of radius `eps` around `center` so that
/// `|x_i - center_i| <= eps` holds for the computed floating-point difference.
pub fn project(center: &[f64], x: &mut [f64], eps: f64) {
    for (v, &c) in x.iter_mut().zip(center) {
        let mut p = v.clamp(c - eps, c + eps);
        while (p - c).abs() > eps {
            p = if p > c { p.next_down() } else { p.next_up() };
        }
        *v = p;
    }
}

/// `log Σ exp z − z[target]` and its gradient with respect to the input.
pub fn ce_input_gradient<S: Scorer + ?Sized>(policy: &S, s: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let x = g.vector(s)?;
    let z = policy.record(&mut g, x)?;
    let lse = g.log_sum_exp(z)?;
    let picked = g.pick(z, &[target])?;
    let loss = g.sub(lse, picked)?;
    let grads = g.backward(loss)?;
    let value = g.value(loss).data()[0];
    Ok((value, grads.get_or_zeros(x, s.len())))
}

fn ce_value(z: &[f64], target: usize) -> f64 {
    crate::numerics::lse(z) - z[target]
}

fn check<S: Scorer + ?Sized>(policy: &S, s: &[f64], cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    if !policy.certifiable() {
        return Err(Error::usage("attacks require a policy in Eval mode"));
    }
    if s.len() != policy.input_dim() {
        return Err(Error::shape(format!(
            "state has {} entries, policy expects {}",
            s.len(),
            policy.input_dim()
        )));
    }
    Ok(())
}

fn outcome<S: Scorer + ?Sized>(policy: &S, perturbed: Vec<f64>, clean_z: &[f64]) -> Result<AttackOutcome> {
    let clean_action = argmax(clean_z);
    let z = policy.scores(&perturbed)?;
    let attacked_action = argmax(&z);
    Ok(AttackOutcome {
        perturbed,
        clean_action,
        attacked_action,
        flipped: attacked_action != clean_action,
        loss_before: ce_value(clean_z, clean_action),
        loss_after: ce_value(&z, clean_action),
    })
}

/// Sign-gradient ascent on the cross-entropy of the clean action, projected
/// onto the ε box after every step.
pub fn pgd_attack<S: Scorer + ?Sized>(policy: &S, s: &[f64], cfg: &AttackConfig) -> Result<AttackOutcome> {
    check(policy, s, cfg)?;
    let clean_z = policy.scores(s)?;
    if cfg.eps == 0.0 {
        return outcome(policy, s.to_vec(), &clean_z);
    }
    let target = argmax(&clean_z);
    let eta = cfg.step_size();
    let mut x = s.to_vec();
    for _ in 0..cfg.steps {
        let (_, grad) = ce_input_gradient(policy, &x, target)?;
        for (v, gi) in x.iter_mut().zip(&grad) {
            *v += eta * sign0(*gi);
        }
        project(s, &mut x, cfg.eps);
    }
    outcome(policy, x, &clean_z)
}

fn ri_fgsm_once<S: Scorer + ?Sized>(
    policy: &S,
    s: &[f64],
    cfg: &AttackConfig,
    target: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream(seed);
    let mut x: Vec<f64> = s.iter().map(|&v| v + rng.random_range(-cfg.eps..=cfg.eps)).collect();
    project(s, &mut x, cfg.eps);
    let (_, grad) = ce_input_gradient(policy, &x, target)?;
    let eta = cfg.step_size();
    for (v, gi) in x.iter_mut().zip(&grad) {
        *v += eta * sign0(*gi);
    }
    project(s, &mut x, cfg.eps);
    Ok(x)
}

/// Random start inside the box, then one projected sign-gradient step.
///
/// The multi-start family repeats with fresh starts and returns the first
/// sample that changes the decision, or the last one tried.
pub fn ri_fgsm<S: Scorer + ?Sized>(policy: &S, s: &[f64], cfg: &AttackConfig) -> Result<AttackOutcome> {
    check(policy, s, cfg)?;
    let clean_z = policy.scores(s)?;
    if cfg.eps == 0.0 {
        return outcome(policy, s.to_vec(), &clean_z);
    }
    let target = argmax(&clean_z);
    let tries = match cfg.family {
        AttackFamily::RiFgsmMulti => cfg.restarts,
        _ => 1,
    };
    let mut last = None;
    for r in 0..tries {
        let x = ri_fgsm_once(policy, s, cfg, target, derive_seed(cfg.seed, "restart", r as u64))?;
        let out = outcome(policy, x, &clean_z)?;
        if out.flipped {
            return Ok(out);
        }
        last = Some(out);
    }
    Ok(last.expect("at least one try"))
}

/// Dispatches on `cfg.family`.
pub fn attack<S: Scorer + ?Sized>(policy: &S, s: &[f64], cfg: &AttackConfig) -> Result<AttackOutcome> {
    match cfg.family {
        AttackFamily::Pgd => pgd_attack(policy, s, cfg),
        AttackFamily::RiFgsm | AttackFamily::RiFgsmMulti => ri_fgsm(policy, s, cfg),
    }
}
