//! Margin certificates against a brute-force search for the true radius.
//!
//! Each state of a random 4-D policy gets the certified radius (half the
//! margin) and the smallest flipping radius found by a directional search.
//! The certificate never exceeds the searched radius.

use rand::Rng;
use sortrl::certify::{brute_force_radius, certify_state, BruteForceConfig};
use sortrl::lnn::{Mode, SortNetConfig, SortNetPolicy};
use sortrl::rng::stream;

fn main() -> sortrl::Result<()> {
    let mut policy = SortNetPolicy::new(SortNetConfig::new(4, 2, vec![32, 32]), 8)?;
    policy.set_mode(Mode::Eval);
    let cfg = BruteForceConfig::default();
    let mut rng = stream(1);
    println!("{:>6} {:>10} {:>12} {:>12}", "state", "margin", "certified r", "searched r");
    for i in 0..10 {
        let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cert = certify_state(&policy, &s, 0.05)?;
        let searched = brute_force_radius(&policy, &s, &cfg)?;
        println!("{i:>6} {:>10.4} {:>12.4} {:>12.4}", cert.margin, cert.radius_lb, searched);
        assert!(searched + cfg.resolution >= cert.radius_lb);
    }
    Ok(())
}
