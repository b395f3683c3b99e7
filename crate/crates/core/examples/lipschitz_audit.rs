//! Empirical l∞ Lipschitz audit of a freshly initialized sort network.
//!
//! ```text
//! cargo run --release --example lipschitz_audit -- [pairs]
//! ```

use std::time::Instant;

use sortrl::certify::lipschitz_audit;
use sortrl::lnn::{Mode, SortNetConfig, SortNetPolicy};

fn main() -> sortrl::Result<()> {
    let pairs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    for widths in [vec![16], vec![64, 64], vec![128, 128, 128]] {
        let mut policy = SortNetPolicy::new(SortNetConfig::new(4, 2, widths.clone()), 3)?;
        policy.set_mode(Mode::Eval);
        let start = Instant::now();
        let audit = lipschitz_audit(&policy, &[-5.0; 4], &[5.0; 4], pairs, 11)?;
        println!(
            "widths {widths:?}: max ratio {:.12} over {} pairs from {} points ({:.2}s)",
            audit.max_ratio,
            audit.pairs,
            audit.points,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
