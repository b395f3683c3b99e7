//! Bounded observation attacks and attacked-rollout sweeps.

mod attack;
mod sweep;

pub use attack::{
    attack, ce_input_gradient, pgd_attack, project, ri_fgsm, AttackConfig, AttackFamily, AttackOutcome,
};
pub use sweep::{episode_seed, pgd_attack_from, sweep_epsilon, warm_start_flips, write_sweep_csv, SweepRow};
pub(crate) use sweep::{csv_err, mean_and_se};

#[cfg(test)]
mod tests;
