use super::{Env, ObsNormalizer};
use crate::adversary::{attack, AttackConfig};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::scorer::{Margin, Scorer};

/// One decision of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Normalized clean observation.
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// Margin of the policy at the clean observation.
    pub margin: f64,
    /// The adversary changed the decision at this step.
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<Transition>,
    pub total_return: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|t| t.action).collect()
    }

    pub fn flip_count(&self) -> usize {
        self.steps.iter().filter(|t| t.flipped).count()
    }
}

/// Plays one episode. With an adversary, each normalized observation is
/// perturbed inside the attack's ε box before the policy acts on it.
pub fn rollout<S: Scorer + ?Sized>(
    policy: &S,
    env: &mut dyn Env,
    normalizer: &ObsNormalizer,
    adversary: Option<&AttackConfig>,
    seed: u64,
) -> Result<Trajectory> {
    if policy.input_dim() != normalizer.dim() || normalizer.dim() != env.obs_dim() {
        return Err(Error::shape(format!(
            "policy expects {} inputs, normalizer has {}, {} observes {}",
            policy.input_dim(),
            normalizer.dim(),
            env.name(),
            env.obs_dim()
        )));
    }
    if policy.num_actions() != env.num_actions() {
        return Err(Error::shape(format!(
            "policy has {} actions, {} has {}",
            policy.num_actions(),
            env.name(),
            env.num_actions()
        )));
    }
    if adversary.is_some() && !policy.certifiable() {
        return Err(Error::usage("attacked rollouts require a policy in Eval mode"));
    }
    let attack_seed = adversary.map(|cfg| derive_seed(cfg.seed, "episode", seed));
    let mut obs = env.reset(seed);
    let mut steps = Vec::new();
    let mut total_return = 0.0;
    for t in 0..env.max_steps() {
        let state = normalizer.transform(&obs)?;
        let z = policy.scores(&state)?;
        let margin = Margin::of(&z)?;
        let (action, flipped) = match adversary {
            Some(cfg) => {
                let step_cfg = cfg.with_seed(derive_seed(attack_seed.expect("set with adversary"), "step", t as u64));
                let out = attack(policy, &state, &step_cfg)?;
                (out.attacked_action, out.flipped)
            }
            None => (margin.best, false),
        };
        let step = env.step(action)?;
        total_return += step.reward;
        steps.push(Transition {
            state,
            action,
            reward: step.reward,
            margin: margin.value,
            flipped,
        });
        if step.done() {
            break;
        }
        obs = step.obs;
    }
    Ok(Trajectory {
        seed,
        steps,
        total_return,
    })
}

/// Clean greedy returns of `episodes` rollouts with seeds `seed_of(i)`.
pub fn evaluate_returns<S: Scorer + ?Sized>(
    policy: &S,
    env: &mut dyn Env,
    normalizer: &ObsNormalizer,
    episodes: usize,
    seed_of: impl Fn(usize) -> u64,
) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|i| rollout(policy, env, normalizer, None, seed_of(i)).map(|t| t.total_return))
        .collect()
}
