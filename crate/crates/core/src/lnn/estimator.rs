use rand::Rng;
use rand_distr::StandardNormal;

use super::config::contraction_weights;
use crate::error::{Error, Result};
use crate::numerics::smooth_max;
use crate::rng::stream;

/// One draw of `(Σ_i (s_i x_i)^p)^(1/p)` with `s_i ~ Bernoulli(1 - rho)`.
///
/// As `p → ∞` this tends to `max_i s_i x_i`, whose expectation is
/// `ωᵀ sort_desc(x)`.
pub fn bernoulli_estimate<R: Rng + ?Sized>(x: &[f64], rho: f64, p: f64, rng: &mut R) -> Result<f64> {
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::domain(format!("estimator input must be nonnegative, got {v}")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::domain(format!("rho must lie in [0, 1), got {rho}")));
    }
    if !(p >= 1.0) {
        return Err(Error::domain(format!("p must be >= 1, got {p}")));
    }
    let keep = 1.0 - rho;
    let u: Vec<f64> = x
        .iter()
        .map(|&v| if rng.random::<f64>() < keep { v } else { 0.0 })
        .collect();
    Ok(smooth_max(&u, p).0)
}

/// `ωᵀ sort_desc(x)` with `ω_i = (1 - ρ) ρ^(i-1)`.
pub fn sorted_contraction(x: &[f64], rho: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    contraction_weights(rho, s.len()).iter().zip(&s).map(|(w, v)| w * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasDiagnostic {
    pub mean: f64,
    pub std_err: f64,
    pub inits: usize,
}

/// Mean first-layer output at zero input over `n_inits` independent bias
/// initializations of a `units × input_dim` layer, before normalization.
///
/// `gaussian = false` uses all-zero biases.
pub fn bias_diagnostic(
    rho: f64,
    input_dim: usize,
    units: usize,
    n_inits: usize,
    gaussian: bool,
    seed: u64,
) -> Result<BiasDiagnostic> {
    if n_inits < 100 {
        return Err(Error::usage(format!("bias diagnostic needs at least 100 inits, got {n_inits}")));
    }
    if input_dim == 0 || units == 0 {
        return Err(Error::shape("layer dimensions must be positive"));
    }
    let mut rng = stream(seed);
    let w = contraction_weights(rho, input_dim);
    let mut samples = Vec::with_capacity(n_inits);
    let mut buf = vec![0.0; input_dim];
    for _ in 0..n_inits {
        let mut total = 0.0;
        for _ in 0..units {
            for b in buf.iter_mut() {
                let v: f64 = if gaussian { rng.sample(StandardNormal) } else { 0.0 };
                // zero input: |0 + b|
                *b = v.abs();
            }
            buf.sort_by(|a, b| b.total_cmp(a));
            total += w.iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>();
        }
        samples.push(total / units as f64);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BiasDiagnostic {
        mean,
        std_err: (var / n).sqrt(),
        inits: n_inits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_element_expectation_by_enumeration() {
        // Outcomes of (s1, s2): (1,1) and (1,0) give 2, (0,1) gives 1, (0,0) gives 0.
        let keep: f64 = 0.7;
        let e = keep * keep * 2.0 + keep * (1.0 - keep) * 2.0 + (1.0 - keep) * keep * 1.0;
        assert!((e - 1.61).abs() < 1e-12);
        assert!((sorted_contraction(&[2.0, 1.0], 0.3) - 1.61).abs() < 1e-12);
        assert!((sorted_contraction(&[1.0, 2.0], 0.3) - 1.61).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let mut rng = stream(1);
        let x = [0.4, 2.5, 1.0];
        // rho = 0 keeps every entry; large p approaches the plain maximum.
        let v = bernoulli_estimate(&x, 0.0, 1e6, &mut rng).unwrap();
        assert!((v - 2.5).abs() < 1e-5);
        for _ in 0..50 {
            let v = bernoulli_estimate(&[1.3; 6], 0.3, 1e6, &mut rng).unwrap();
            assert!(v == 0.0 || (v - 1.3).abs() < 1e-5, "{v}");
        }
        assert!(matches!(bernoulli_estimate(&[1.0, -0.5], 0.3, 8.0, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn no_overflow_at_large_p() {
        let mut rng = stream(5);
        let v = bernoulli_estimate(&[40.0, 39.0], 0.0, 1e3, &mut rng).unwrap();
        assert!(v.is_finite() && (v - 40.0).abs() < 1e-6);
    }

    #[test]
    fn bias_statement() {
        let d = bias_diagnostic(0.3, 64, 1, 1000, true, 9).unwrap();
        assert!(d.mean > 5.0 * d.std_err, "{d:?}");
        let z = bias_diagnostic(0.3, 64, 1, 100, false, 9).unwrap();
        assert_eq!(z.mean, 0.0);
        let near_one = bias_diagnostic(0.999_999, 64, 1, 200, true, 9).unwrap();
        assert!(near_one.mean < 1e-4, "{near_one:?}");
        assert!(bias_diagnostic(0.3, 8, 1, 10, true, 0).is_err());
    }
}
