use std::io::Write;

use rayon::prelude::*;

use super::attack::{ce_input_gradient, project, AttackConfig};
use crate::envs::{rollout, EnvKind, ObsNormalizer};
use crate::error::{Error, Result};
use crate::numerics::sign0;
use crate::rng::derive_seed;
use crate::scorer::{argmax, Scorer};

/// Aggregate of attacked rollouts at one budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub env: String,
    pub attack: String,
    pub eps: f64,
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_err: f64,
    /// Fraction of decisions the adversary changed.
    pub flip_rate: f64,
    /// Mean clean-observation margin over visited states.
    pub mean_margin: f64,
    pub returns: Vec<f64>,
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Seed of evaluation episode `i`; shared across budgets and policies so
/// curves compare the same initial states.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, "eval-episode", i as u64)
}

/// Runs `episodes` rollouts at every budget in `eps_list`. A budget of zero
/// is a clean rollout.
pub fn sweep_epsilon<S: Scorer + Sync + ?Sized>(
    policy: &S,
    env: EnvKind,
    normalizer: &ObsNormalizer,
    eps_list: &[f64],
    episodes: usize,
    template: &AttackConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if episodes == 0 {
        return Err(Error::usage("a sweep needs at least one episode"));
    }
    if !policy.certifiable() {
        return Err(Error::usage("sweeps require a policy in Eval mode"));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let cfg = template.with_eps(eps);
        cfg.validate()?;
        let trajectories: Vec<_> = (0..episodes)
            .into_par_iter()
            .map(|i| {
                let mut e = env.make();
                let adversary = (eps > 0.0).then_some(&cfg);
                rollout(policy, e.as_mut(), normalizer, adversary, episode_seed(seed, i))
            })
            .collect::<Result<_>>()?;
        let returns: Vec<f64> = trajectories.iter().map(|t| t.total_return).collect();
        let (mean_reward, std_err) = mean_and_se(&returns);
        let steps: usize = trajectories.iter().map(|t| t.len()).sum();
        let flips: usize = trajectories.iter().map(|t| t.flip_count()).sum();
        let margin_sum: f64 = trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.margin)).sum();
        rows.push(SweepRow {
            env: env.name().to_string(),
            attack: cfg.family.tag().to_string(),
            eps,
            episodes,
            mean_reward,
            std_err,
            flip_rate: flips as f64 / steps.max(1) as f64,
            mean_margin: margin_sum / steps.max(1) as f64,
            returns,
        });
    }
    Ok(rows)
}

/// `env,attack,eps,episodes,mean_reward,std_err,flip_rate,mean_margin`.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["env", "attack", "eps", "episodes", "mean_reward", "std_err", "flip_rate", "mean_margin"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.env.clone(),
            r.attack.clone(),
            r.eps.to_string(),
            r.episodes.to_string(),
            r.mean_reward.to_string(),
            r.std_err.to_string(),
            r.flip_rate.to_string(),
            r.mean_margin.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// PGD started from `start` (projected into the box) instead of `s`.
pub fn pgd_attack_from<S: Scorer + ?Sized>(
    policy: &S,
    s: &[f64],
    start: &[f64],
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let target = argmax(&policy.scores(s)?);
    let mut x = start.to_vec();
    project(s, &mut x, cfg.eps);
    let eta = cfg.step_size();
    for _ in 0..cfg.steps {
        let (_, grad) = ce_input_gradient(policy, &x, target)?;
        for (v, gi) in x.iter_mut().zip(&grad) {
            *v += eta * sign0(*gi);
        }
        project(s, &mut x, cfg.eps);
    }
    Ok(x)
}

/// Flip indicators for fixed `states` over an increasing budget grid.
///
/// Each budget starts PGD from the previous budget's perturbation, and a
/// perturbation that already flipped is kept, so the flipped set can only
/// grow with ε.
pub fn warm_start_flips<S: Scorer + ?Sized>(
    policy: &S,
    states: &[Vec<f64>],
    eps_grid: &[f64],
    template: &AttackConfig,
) -> Result<Vec<Vec<bool>>> {
    if eps_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::usage("warm-started sweeps need a nondecreasing budget grid"));
    }
    let mut current: Vec<Vec<f64>> = states.to_vec();
    let mut flipped = vec![false; states.len()];
    let mut out = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let cfg = template.with_eps(eps);
        for (i, s) in states.iter().enumerate() {
            if flipped[i] || eps == 0.0 {
                continue;
            }
            let clean = argmax(&policy.scores(s)?);
            let x = pgd_attack_from(policy, s, &current[i], &cfg)?;
            if argmax(&policy.scores(&x)?) != clean {
                flipped[i] = true;
            }
            current[i] = x;
        }
        out.push(flipped.clone());
    }
    Ok(out)
}
