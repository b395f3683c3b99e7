//! Classic-control environments, observation normalization and the
//! (optionally attacked) rollout loop.

mod classic;
mod normalizer;
mod rollout;

use serde::{Deserialize, Serialize};

pub use classic::{
    acrobot, acrobot_step, cartpole, cartpole_step, mountaincar, mountaincar_step, Acrobot, CartPole, MountainCar,
};
pub use normalizer::ObsNormalizer;
pub use rollout::{evaluate_returns, rollout, Trajectory, Transition};

use crate::error::{Error, Result};

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The task reached a terminal state.
    pub terminated: bool,
    /// The step cap ended the episode.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// A seeded, single-owner episodic task with a discrete action set.
pub trait Env: Send {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn max_steps(&self) -> usize;

    fn gamma(&self) -> f64 {
        0.99
    }

    /// Starts a new episode; the initial state depends only on `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Fails with a usage error before `reset` or after the episode ended.
    fn step(&mut self, action: usize) -> Result<Step>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    #[default]
    CartPole,
    Acrobot,
    MountainCar,
}

impl EnvKind {
    pub const NAMES: [&'static str; 3] = ["cartpole", "acrobot", "mountaincar"];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::Acrobot => "acrobot",
            EnvKind::MountainCar => "mountaincar",
        }
    }

    pub fn make(self) -> Box<dyn Env> {
        match self {
            EnvKind::CartPole => Box::new(CartPole::new()),
            EnvKind::Acrobot => Box::new(Acrobot::new()),
            EnvKind::MountainCar => Box::new(MountainCar::new()),
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvKind::CartPole),
            "acrobot" => Ok(EnvKind::Acrobot),
            "mountaincar" => Ok(EnvKind::MountainCar),
            other => Err(Error::Config(format!(
                "unknown environment {other:?}; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Builds an environment from its name.
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    Ok(name.parse::<EnvKind>()?.make())
}

#[cfg(test)]
mod tests;
