//! Trains a DQN teacher on a classic-control task and reports its greedy
//! return.
//!
//! ```text
//! cargo run --release --example train_teacher -- cartpole 7 [config.json]
//! ```
//!
//! The optional JSON file overrides fields of the default teacher config.

use std::time::Instant;

use sortrl::envs::EnvKind;
use sortrl::teacher::{train_teacher_with, TeacherConfig};

fn main() -> sortrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let env: EnvKind = args.next().as_deref().unwrap_or("cartpole").parse()?;
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let config: TeacherConfig = match args.next() {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => TeacherConfig::default(),
    };
    let start = Instant::now();
    let (teacher, _) = train_teacher_with(env, &config, seed, |row| {
        println!(
            "[{:>6.1}s] step {:>7}  episodes {:>5}  eps {:.3}  loss {:.4}  greedy return {:.1}",
            start.elapsed().as_secs_f64(),
            row.step,
            row.episodes_done, row.epsilon, row.mean_loss, row.eval_return
        );
    })?;
    let returns = teacher.evaluate(20, seed ^ 0xA5A5)?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    println!(
        "{env}: trained {} steps in {:.1}s, fresh-seed greedy mean {mean:.1}",
        teacher.train_steps,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
