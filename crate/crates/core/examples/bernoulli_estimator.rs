//! The Bernoulli-mask estimator of the sorted contraction, and the
//! positive output bias of a Gaussian-initialized first layer.

use rand::Rng;
use sortrl::lnn::{bernoulli_estimate, bias_diagnostic, sorted_contraction};
use sortrl::rng::stream;

fn main() -> sortrl::Result<()> {
    let rho = 0.3;
    let mut rng = stream(5);
    for d in [2, 4, 8, 16] {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let exact = sorted_contraction(&x, rho);
        for p in [8.0, 100.0, 1e3] {
            let n = 50_000;
            let mut draws = stream(d as u64);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += bernoulli_estimate(&x, rho, p, &mut draws)?;
            }
            println!("d {d:>2} p {p:>6}: estimate {:.5} exact {exact:.5}", sum / n as f64);
        }
    }
    let diag = bias_diagnostic(rho, 4, 64, 1000, true, 0)?;
    println!(
        "zero-input first-layer output over {} inits: mean {:.4} ({:.1} standard errors above zero)",
        diag.inits,
        diag.mean,
        diag.mean / diag.std_err
    );
    Ok(())
}
