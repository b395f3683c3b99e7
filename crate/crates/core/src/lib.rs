pub mod adversary;
pub mod certify;
pub mod cli;
pub mod distill;
pub mod envs;
pub mod error;
pub mod lnn;
pub mod numerics;
pub mod rng;
pub mod scorer;
pub mod teacher;

pub use error::{Error, Result};
