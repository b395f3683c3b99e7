//! Sort-network score functions: the 1-Lipschitz (l∞) policy network,
//! its normalization state, and the Bernoulli sort estimator.

mod config;
mod estimator;
mod policy;

pub use config::{contraction_weights, ForwardMode, Mode, SortNetConfig};
pub use estimator::{bernoulli_estimate, bias_diagnostic, sorted_contraction, BiasDiagnostic};
pub use policy::{BiasInit, NormState, SortNetPolicy};

#[cfg(test)]
mod tests;
