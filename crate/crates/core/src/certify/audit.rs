use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{ce_input_gradient, project};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scorer::{argmax, Scorer};

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn require(policy: &(impl Scorer + ?Sized), s_len: usize) -> Result<()> {
    if !policy.certifiable() {
        return Err(Error::usage("audits require a policy in Eval mode"));
    }
    if s_len != policy.input_dim() {
        return Err(Error::shape(format!("state has {s_len} entries, policy expects {}", policy.input_dim())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzAudit {
    /// Largest `‖g(s1) − g(s2)‖∞ / ‖s1 − s2‖∞` seen.
    pub max_ratio: f64,
    pub pairs: usize,
    pub points: usize,
}

/// Empirical l∞ Lipschitz constant of the score map over the box `[lo, hi]`.
///
/// Draws a pool of points (half uniform in the box, half jittered copies of
/// earlier points at log-uniform scales between 1e-6 and the box width) and
/// compares every pair until `n_pairs` pairs are used, so the cost is about
/// `sqrt(2 n_pairs)` forward passes.
pub fn lipschitz_audit<S: Scorer + Sync + ?Sized>(
    policy: &S,
    lo: &[f64],
    hi: &[f64],
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzAudit> {
    require(policy, lo.len())?;
    if hi.len() != lo.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(Error::domain("audit box needs lo < hi in every coordinate"));
    }
    let mut points_needed = 2;
    while points_needed * (points_needed - 1) / 2 < n_pairs {
        points_needed += 1;
    }
    let mut rng = stream(seed);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(points_needed);
    for i in 0..points_needed {
        let p = if i == 0 || rng.random_bool(0.5) {
            lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..*b)).collect()
        } else {
            let base = &points[rng.random_range(0..i)];
            let scale = 10f64.powf(rng.random_range(-6.0..0.0));
            base.iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| v + scale * (b - a) * rng.random_range(-1.0..1.0))
                .collect()
        };
        points.push(p);
    }
    let scores: Vec<Vec<f64>> = points.par_iter().map(|p| policy.scores(p)).collect::<Result<_>>()?;
    let mut max_ratio: f64 = 0.0;
    let mut pairs = 0;
    'outer: for i in 1..points.len() {
        for j in 0..i {
            if pairs == n_pairs {
                break 'outer;
            }
            pairs += 1;
            let dx = linf(&points[i], &points[j]);
            if dx > 0.0 {
                max_ratio = max_ratio.max(linf(&scores[i], &scores[j]) / dx);
            }
        }
    }
    Ok(LipschitzAudit {
        max_ratio,
        pairs,
        points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BruteForceConfig {
    pub resolution: f64,
    pub max_r: f64,
    /// Random directions tried at each radius, on top of the box corners
    /// (inputs of dimension ≤ 6) and the signed loss gradient.
    pub random_directions: usize,
    pub seed: u64,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        Self {
            resolution: 0.01,
            max_r: 4.0,
            random_directions: 32,
            seed: 0,
        }
    }
}

/// Smallest l∞ perturbation size found that changes the decision at `s`,
/// an upper bound on the true robust radius; `max_r` if nothing flips.
///
/// Tries a fixed direction set at radii `resolution · 2^k`, then bisects
/// along the first flipping direction to within `resolution`.
pub fn brute_force_radius<S: Scorer + ?Sized>(policy: &S, s: &[f64], cfg: &BruteForceConfig) -> Result<f64> {
    require(policy, s.len())?;
    if !(cfg.resolution > 0.0) || !(cfg.max_r >= cfg.resolution) {
        return Err(Error::domain("brute-force search needs 0 < resolution <= max_r"));
    }
    let d = s.len();
    let clean = policy.act(s)?;
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    let (_, grad) = ce_input_gradient(policy, s, clean)?;
    if grad.iter().any(|g| *g != 0.0) {
        dirs.push(grad.iter().map(|g| if *g > 0.0 { 1.0 } else if *g < 0.0 { -1.0 } else { 0.0 }).collect());
    }
    if d <= 6 {
        for mask in 0..(1u32 << d) {
            dirs.push((0..d).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect());
        }
    }
    let mut rng = stream(cfg.seed);
    for _ in 0..cfg.random_directions {
        let mut u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if n > 0.0 {
            u.iter_mut().for_each(|v| *v /= n);
            dirs.push(u);
        }
    }
    let flips = |u: &[f64], r: f64| -> Result<bool> {
        let mut x: Vec<f64> = s.iter().zip(u).map(|(a, b)| a + r * b).collect();
        project(s, &mut x, r);
        Ok(argmax(&policy.scores(&x)?) != clean)
    };
    let mut prev = 0.0;
    let mut r = cfg.resolution;
    loop {
        let r_now = r.min(cfg.max_r);
        for u in &dirs {
            if flips(u, r_now)? {
                let (mut lo, mut hi) = (prev, r_now);
                while hi - lo > cfg.resolution {
                    let mid = 0.5 * (lo + hi);
                    if flips(u, mid)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Ok(hi);
            }
        }
        if r_now >= cfg.max_r {
            return Ok(cfg.max_r);
        }
        prev = r_now;
        r *= 2.0;
    }
}

/// Number of uniform draws from the l∞ ball of radius `eps` around `s`
/// (plus the `2^d` corners for `d ≤ 10`) whose decision differs from the
/// clean one.
pub fn count_random_flips<S: Scorer + ?Sized>(policy: &S, s: &[f64], eps: f64, samples: usize, seed: u64) -> Result<usize> {
    require(policy, s.len())?;
    if !(eps >= 0.0) {
        return Err(Error::domain(format!("perturbation budget must be nonnegative, got {eps}")));
    }
    let clean = policy.act(s)?;
    let d = s.len();
    let mut flips = 0;
    let mut x = vec![0.0; d];
    if d <= 10 {
        for mask in 0..(1u32 << d) {
            for (i, v) in x.iter_mut().enumerate() {
                *v = if mask >> i & 1 == 1 { s[i] + eps } else { s[i] - eps };
            }
            project(s, &mut x, eps);
            flips += usize::from(policy.act(&x)? != clean);
        }
    }
    let mut rng = stream(seed);
    for _ in 0..samples {
        for (v, c) in x.iter_mut().zip(s) {
            *v = c + eps * rng.random_range(-1.0..=1.0);
        }
        project(s, &mut x, eps);
        flips += usize::from(policy.act(&x)? != clean);
    }
    Ok(flips)
}
