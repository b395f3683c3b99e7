//! Distills a sort-network student from the scripted CartPole controller
//! and compares their clean returns.
//!
//! ```text
//! cargo run --release --example distill_student -- [iterations]
//! ```

use sortrl::distill::{distill_train_with, DistillConfig};
use sortrl::envs::{evaluate_returns, EnvKind};
use sortrl::teacher::{build_dataset, scripted_cartpole};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() -> sortrl::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let teacher = scripted_cartpole(20, 0)?;
    let data = build_dataset(&teacher, 10_000, 1)?;
    let cfg = DistillConfig {
        iterations,
        batch_size: 256,
        hidden_widths: vec![32, 32],
        ..DistillConfig::default()
    };
    let (student, log) = distill_train_with(&data, &cfg, 0, |row, _| {
        if row.iteration % 50 == 0 {
            println!(
                "it {:>5} ce {:.4} rob {:+.4} lambda {:.3} agree {:.3} margin>=theta {:.3}",
                row.iteration, row.ce, row.rob, row.lambda, row.agree_rate, row.margin_frac
            );
        }
        Ok(())
    })?;
    let mut env = EnvKind::CartPole.make();
    let student_returns = evaluate_returns(&student, env.as_mut(), &teacher.normalizer, 10, |i| i as u64)?;
    let teacher_returns = evaluate_returns(&teacher.net, env.as_mut(), &teacher.normalizer, 10, |i| i as u64)?;
    println!(
        "{} steps; clean return student {:.1}, teacher {:.1}",
        log.rows.len(),
        mean(&student_returns),
        mean(&teacher_returns)
    );
    Ok(())
}
