//! Attacked-return sweep over budgets for a student and its teacher on
//! paired episode seeds.

use sortrl::adversary::{sweep_epsilon, AttackConfig};
use sortrl::distill::{distill_train, DistillConfig};
use sortrl::envs::EnvKind;
use sortrl::teacher::{build_dataset, scripted_cartpole};

fn main() -> sortrl::Result<()> {
    let teacher = scripted_cartpole(20, 0)?;
    let data = build_dataset(&teacher, 10_000, 1)?;
    let cfg = DistillConfig {
        iterations: 300,
        batch_size: 256,
        hidden_widths: vec![32, 32],
        ..DistillConfig::default()
    };
    let (student, _) = distill_train(&data, &cfg, 0)?;
    let grid = [0.0, 0.05, 0.1, 0.15, 0.2];
    let attack = AttackConfig::pgd(0.1);
    let s = sweep_epsilon(&student, EnvKind::CartPole, &teacher.normalizer, &grid, 5, &attack, 3)?;
    let t = sweep_epsilon(&teacher.net, EnvKind::CartPole, &teacher.normalizer, &grid, 5, &attack, 3)?;
    println!("{:>5} {:>16} {:>16} {:>10}", "eps", "student", "teacher", "flip rate");
    for (a, b) in s.iter().zip(&t) {
        println!(
            "{:>5.2} {:>8.1} ± {:<5.1} {:>8.1} ± {:<5.1} {:>10.3}",
            a.eps, a.mean_reward, a.std_err, b.mean_reward, b.std_err, a.flip_rate
        );
    }
    Ok(())
}
