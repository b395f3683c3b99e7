//! Margin certificates, certification rates over rollouts, and empirical
//! checks of the Lipschitz bound.

mod audit;
mod margin;

pub use audit::{brute_force_radius, count_random_flips, lipschitz_audit, BruteForceConfig, LipschitzAudit};
pub use margin::{
    acr, acr_curve, acr_from_margins, certify_state, collect_margins, read_margins_csv, write_acr_csv,
    write_certificates_csv, AcrReport, Certificate, MarginSample,
};
