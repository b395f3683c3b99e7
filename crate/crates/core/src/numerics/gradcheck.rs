//! Central-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error metric: `|a - n| / max(1, |n|)`, maximised over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar function of a flat vector.
pub fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the reverse-mode gradient of `f` at `x` with central
/// differences of step `h`.
///
/// `f` records a scalar-valued computation of its input leaf onto the
/// graph it is given.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |data: &[f64]| -> Result<(Graph, Var, Var)> {
        let mut g = Graph::new();
        let input = g.leaf(Tensor::new(x.shape().to_vec(), data.to_vec())?);
        let out = f(&mut g, input)?;
        if g.value(out).len() != 1 {
            return Err(Error::usage("grad_check needs a scalar-valued function"));
        }
        Ok((g, input, out))
    };
    let (g, input, out) = eval(x.data())?;
    let analytic = g.backward(out)?.get_or_zeros(input, x.len());
    let numeric = central_difference(
        |d| {
            let (g, _, out) = eval(d)?;
            Ok(g.value(out).data()[0])
        },
        x.data(),
        h,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
