use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::adversary::{csv_err, episode_seed};
use crate::envs::{rollout, EnvKind, ObsNormalizer};
use crate::error::{Error, Result};
use crate::scorer::{Margin, Scorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub action: usize,
    pub margin: f64,
    /// `margin / 2`.
    pub radius_lb: f64,
    pub eps: f64,
    /// `margin >= 2 eps`.
    pub certified: bool,
}

impl Certificate {
    pub fn from_margin(action: usize, margin: f64, eps: f64) -> Self {
        Self {
            action,
            margin,
            radius_lb: margin / 2.0,
            eps,
            certified: margin >= 2.0 * eps,
        }
    }
}

fn require_certifiable<S: Scorer + ?Sized>(policy: &S) -> Result<()> {
    if !policy.certifiable() {
        return Err(Error::usage("certificates require a policy in Eval mode"));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::domain(format!("perturbation budget must be finite and nonnegative, got {eps}")));
    }
    Ok(())
}

/// Certificate for the decision at `s` against every l∞ perturbation of size `eps`.
pub fn certify_state<S: Scorer + ?Sized>(policy: &S, s: &[f64], eps: f64) -> Result<Certificate> {
    require_certifiable(policy)?;
    check_eps(eps)?;
    let m: Margin = policy.margin(s)?;
    Ok(Certificate::from_margin(m.best, m.value, eps))
}

/// Fraction of states whose decision is certified at `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcrReport {
    pub eps: f64,
    pub n_states: usize,
    pub n_certified: usize,
    pub acr: f64,
}

pub fn acr_from_margins(margins: &[f64], eps: f64) -> Result<AcrReport> {
    check_eps(eps)?;
    if margins.is_empty() {
        return Err(Error::domain("certification rate over zero states"));
    }
    let threshold = 2.0 * eps;
    let n_certified = margins.iter().filter(|&&m| m >= threshold).count();
    Ok(AcrReport {
        eps,
        n_states: margins.len(),
        n_certified,
        acr: n_certified as f64 / margins.len() as f64,
    })
}

pub fn acr_curve(margins: &[f64], eps_grid: &[f64]) -> Result<Vec<AcrReport>> {
    eps_grid.iter().map(|&e| acr_from_margins(margins, e)).collect()
}

/// A state visited by a clean rollout, with the policy's margin there.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSample {
    pub episode: usize,
    pub step: usize,
    pub state: Vec<f64>,
    pub margin: f64,
}

/// Runs `episodes` clean rollouts on the shared evaluation seeds and
/// records every visited state.
pub fn collect_margins<S: Scorer + ?Sized>(
    policy: &S,
    env: EnvKind,
    normalizer: &ObsNormalizer,
    episodes: usize,
    seed: u64,
) -> Result<Vec<MarginSample>> {
    require_certifiable(policy)?;
    let mut out = Vec::new();
    let mut e = env.make();
    for i in 0..episodes {
        let traj = rollout(policy, e.as_mut(), normalizer, None, episode_seed(seed, i))?;
        out.extend(traj.steps.into_iter().enumerate().map(|(t, step)| MarginSample {
            episode: i,
            step: t,
            state: step.state,
            margin: step.margin,
        }));
    }
    Ok(out)
}

pub fn acr<S: Scorer + ?Sized>(
    policy: &S,
    env: EnvKind,
    normalizer: &ObsNormalizer,
    eps: f64,
    episodes: usize,
    seed: u64,
) -> Result<AcrReport> {
    let samples = collect_margins(policy, env, normalizer, episodes, seed)?;
    let margins: Vec<f64> = samples.iter().map(|s| s.margin).collect();
    acr_from_margins(&margins, eps)
}

/// `state_index,margin,radius_lb,certified`.
pub fn write_certificates_csv<W: Write>(out: W, certs: &[Certificate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state_index", "margin", "radius_lb", "certified"]).map_err(csv_err)?;
    for (i, c) in certs.iter().enumerate() {
        w.write_record([i.to_string(), c.margin.to_string(), c.radius_lb.to_string(), c.certified.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Margins back from a certificate CSV, in row order.
pub fn read_margins_csv<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let col = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .position(|h| h == "margin")
        .ok_or_else(|| Error::Format("certificate CSV has no margin column".into()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let v = rec.get(col).ok_or_else(|| Error::Format("short certificate row".into()))?;
        out.push(v.parse().map_err(|_| Error::Format(format!("bad margin {v:?}")))?);
    }
    Ok(out)
}

/// `eps,n_states,n_certified,acr`.
pub fn write_acr_csv<W: Write>(out: W, reports: &[AcrReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "n_states", "n_certified", "acr"]).map_err(csv_err)?;
    for r in reports {
        w.write_record([r.eps.to_string(), r.n_states.to_string(), r.n_certified.to_string(), r.acr.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
