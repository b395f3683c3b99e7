//! Action-score functions and the argmax decision rule shared by the
//! student, the teacher and test fixtures.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// A differentiable map from an observation to one score per action.
pub trait Scorer {
    fn input_dim(&self) -> usize;

    fn num_actions(&self) -> usize;

    /// Scores for a single observation.
    fn scores(&self, s: &[f64]) -> Result<Vec<f64>>;

    /// Records the score computation for input `x` onto `g`.
    ///
    /// Must agree with [`Scorer::scores`]; used for input gradients.
    fn record(&self, g: &mut Graph, x: Var) -> Result<Var>;

    /// Whether the score map is a fixed function of the input, so margins
    /// certify decisions. False for a network still updating its statistics.
    fn certifiable(&self) -> bool {
        true
    }

    fn act(&self, s: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(s)?))
    }

    fn margin(&self, s: &[f64]) -> Result<Margin> {
        Margin::of(&self.scores(s)?)
    }
}

impl<T: Scorer + ?Sized> Scorer for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn scores(&self, s: &[f64]) -> Result<Vec<f64>> {
        (**self).scores(s)
    }
    fn record(&self, g: &mut Graph, x: Var) -> Result<Var> {
        (**self).record(g, x)
    }
    fn certifiable(&self) -> bool {
        (**self).certifiable()
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Gap between the best and the runner-up score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin {
    pub value: f64,
    pub best: usize,
    pub runner_up: usize,
}

impl Margin {
    pub fn of(z: &[f64]) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::domain(format!("margin needs at least two actions, got {}", z.len())));
        }
        let best = argmax(z);
        let runner_up = (0..z.len())
            .filter(|&i| i != best)
            .fold(None, |acc: Option<usize>, i| match acc {
                Some(j) if z[j] >= z[i] => Some(j),
                _ => Some(i),
            })
            .expect("at least two actions");
        Ok(Self {
            value: z[best] - z[runner_up],
            best,
            runner_up,
        })
    }

    /// Half the margin: no perturbation with smaller l∞ norm changes the
    /// decision of a 1-Lipschitz scorer.
    pub fn radius_lower_bound(&self) -> f64 {
        self.value / 2.0
    }
}

/// `z = W s + b`. Used as an analytically tractable scorer in tests and examples.
#[derive(Debug, Clone)]
pub struct LinearScorer {
    weight: Tensor,
    bias: Tensor,
}

impl LinearScorer {
    /// `weight` is `[actions, inputs]` row-major.
    pub fn new(actions: usize, inputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let weight = Tensor::matrix(actions, inputs, weight)?;
        let bias = Tensor::vector(bias)?;
        if bias.len() != actions {
            return Err(Error::shape("bias length must equal the action count"));
        }
        Ok(Self { weight, bias })
    }
}

impl Scorer for LinearScorer {
    fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn num_actions(&self) -> usize {
        self.weight.shape()[0]
    }

    fn scores(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.vector(s)?;
        let z = self.record(&mut g, x)?;
        Ok(g.value(z).data().to_vec())
    }

    fn record(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.leaf(self.weight.clone());
        let b = g.leaf(self.bias.clone());
        g.affine(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_tie_break_and_shift_invariance() {
        assert_eq!(argmax(&[0.2, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        let z = [0.3, -1.0, 0.29];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.25).collect();
        assert_eq!(argmax(&z), argmax(&shifted));
    }

    #[test]
    fn margin_examples() {
        let m = Margin::of(&[0.5, 0.2, 0.2]).unwrap();
        assert!((m.value - 0.3).abs() < 1e-15);
        assert!((m.radius_lower_bound() - 0.15).abs() < 1e-15);
        assert_eq!((m.best, m.runner_up), (0, 1));
        assert_eq!(Margin::of(&[0.7, 0.7, 0.1]).unwrap().value, 0.0);
        assert!(matches!(Margin::of(&[1.0]), Err(Error::Domain(_))));
    }
}
