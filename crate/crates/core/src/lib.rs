//! Koopman/EDMD identification of stochastic lane-change trajectories with
//! truncated-SVD system matrices.

pub mod edmd;
pub mod error;
pub mod evaluation;
pub mod lane_change;
pub mod observables;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
