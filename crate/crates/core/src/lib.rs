//! Online reconstruction of time-varying graph signals with missing node observations.

pub mod baselines;
pub mod client;
pub mod dataset;
pub mod eigen;
pub mod graph;
pub mod harness;
pub mod messenger;
pub mod signal;
