use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    /// Exact descending sort. Deterministic; the only mode eligible for certificates.
    Exact,
    /// Bernoulli-mask estimator with a smoothed maximum.
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture and training-time behaviour of a sort network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SortNetConfig {
    pub input_dim: usize,
    pub num_actions: usize,
    /// Widths of the intermediate layers; the output layer has `num_actions` units.
    pub hidden_widths: Vec<usize>,
    /// Geometric decay of the sorted-contraction weights, in `[0, 1)`.
    pub rho: f64,
    pub forward_mode: ForwardMode,
    pub p_start: f64,
    pub p_end: f64,
    /// Fraction of training over which `p` grows geometrically from `p_start` to `p_end`.
    pub p_ramp_fraction: f64,
    pub norm_momentum: f64,
}

impl SortNetConfig {
    pub fn new(input_dim: usize, num_actions: usize, hidden_widths: Vec<usize>) -> Self {
        Self {
            input_dim,
            num_actions,
            hidden_widths,
            rho: 0.3,
            forward_mode: ForwardMode::Exact,
            p_start: 8.0,
            p_end: 1e3,
            p_ramp_fraction: 0.5,
            norm_momentum: 0.99,
        }
    }

    /// Five layers: four intermediate layers of width 640 and the output layer.
    pub fn classic_control(input_dim: usize, num_actions: usize) -> Self {
        Self::new(input_dim, num_actions, vec![640; 4])
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.input_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        if self.num_actions < 2 {
            return Err(Error::Config("a policy needs at least two actions".into()));
        }
        if !(self.p_start >= 1.0 && self.p_start <= self.p_end) {
            return Err(Error::Config(format!(
                "smoothing schedule needs 1 <= p_start <= p_end, got {} and {}",
                self.p_start, self.p_end
            )));
        }
        if !(0.0..=1.0).contains(&self.p_ramp_fraction) {
            return Err(Error::Config("p_ramp_fraction must lie in [0, 1]".into()));
        }
        if !(self.norm_momentum > 0.0 && self.norm_momentum < 1.0) {
            return Err(Error::Config("norm_momentum must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of layers `M`, including the output layer.
    pub fn layer_count(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    /// `(inputs, units)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.num_actions);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Smoothing exponent at `iteration` out of `total`.
    pub fn p_at(&self, iteration: usize, total: usize) -> f64 {
        let ramp = (self.p_ramp_fraction * total as f64).floor();
        if ramp <= 0.0 || iteration as f64 >= ramp {
            return self.p_end;
        }
        let frac = iteration as f64 / ramp;
        self.p_start * (self.p_end / self.p_start).powf(frac)
    }
}

/// `ω_i = (1 - ρ) ρ^(i-1)` for `i = 1..=d`.
pub fn contraction_weights(rho: f64, d: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(d);
    let mut r = 1.0 - rho;
    for _ in 0..d {
        w.push(r);
        r *= rho;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_l1_norm_closed_form() {
        for &rho in &[0.0, 0.1, 0.3, 0.5, 0.9, 0.99] {
            for d in [1, 2, 4, 64, 128, 640] {
                let s: f64 = contraction_weights(rho, d).iter().sum();
                let closed = 1.0 - f64::powi(rho, d as i32);
                assert!((s - closed).abs() < 1e-12, "rho={rho} d={d}: {s} vs {closed}");
                assert!(s <= 1.0);
            }
        }
        assert_eq!(contraction_weights(0.3, 2), vec![0.7, 0.7 * 0.3]);
    }

    #[test]
    fn p_schedule_is_geometric_then_flat() {
        let c = SortNetConfig::new(4, 2, vec![8]);
        assert_eq!(c.p_at(0, 100), 8.0);
        assert!((c.p_at(25, 100) - (8.0f64 * 1e3).sqrt()).abs() < 1e-9);
        assert_eq!(c.p_at(50, 100), 1e3);
        assert_eq!(c.p_at(100, 100), 1e3);
        let mut prev = 0.0;
        for t in 0..=100 {
            let p = c.p_at(t, 100);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn validation() {
        let mut c = SortNetConfig::new(4, 2, vec![8, 8]);
        assert!(c.validate().is_ok());
        assert_eq!(c.layer_shapes(), vec![(4, 8), (8, 8), (8, 2)]);
        c.rho = 1.0;
        assert!(c.validate().is_err());
        c.rho = 0.3;
        c.p_start = 2e3;
        assert!(c.validate().is_err());
        c.p_start = 8.0;
        c.hidden_widths = vec![0];
        assert!(c.validate().is_err());
    }
}
