//! Prevalence estimation under longitudinal testing with isolation.
//!
//! The crate simulates a well/infectious/removed population under a testing
//! regimen, and estimates daily prevalence from the resulting testing data
//! with the test-positive rate and inverse-probability-weighted
//! (Horvitz–Thompson) estimators.

pub mod dataio;
pub mod error;
pub mod estimators;
pub mod pipeline;
pub mod population;
pub mod regimen;
pub mod scenario;
pub mod simulator;
pub mod uncertainty;

pub use error::{Error, Result};
