//! PGD and RI-FGSM attacks on single observations of a random sort network.
//!
//! States whose certified radius exceeds the budget never flip.

use rand::Rng;
use sortrl::adversary::{attack, AttackConfig};
use sortrl::lnn::{Mode, SortNetConfig, SortNetPolicy};
use sortrl::rng::stream;
use sortrl::scorer::Scorer;

fn main() -> sortrl::Result<()> {
    let mut policy = SortNetPolicy::new(SortNetConfig::new(4, 2, vec![32, 32]), 2)?;
    policy.set_mode(Mode::Eval);
    let mut rng = stream(9);
    let states: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    for eps in [0.0, 0.05, 0.1, 0.2, 0.4] {
        for cfg in [AttackConfig::pgd(eps), AttackConfig::ri_fgsm(eps), AttackConfig::ri_fgsm_multi(eps, 5)] {
            let mut flips = 0;
            let mut certified_flips = 0;
            for s in &states {
                let out = attack(&policy, s, &cfg)?;
                if out.flipped {
                    flips += 1;
                    if policy.margin(s)?.radius_lower_bound() > eps {
                        certified_flips += 1;
                    }
                }
            }
            println!(
                "eps {eps:.2} {:<14} flipped {flips:>3}/200, of which certified {certified_flips}",
                cfg.family.tag()
            );
        }
    }
    Ok(())
}
