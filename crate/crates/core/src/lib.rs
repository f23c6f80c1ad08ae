//! Error-stability stopping for Bayesian active learning.
//!
//! The change in expected generalization error caused by one acquisition is
//! bounded through a Lambert-W transform of the KL divergences between
//! consecutive posteriors. [`stability`] turns those KLs into an error ratio
//! and a stop decision; the model modules ([`bayes_linear`], [`gp`],
//! [`bdnn`]) supply the KLs; [`active`] runs pool-based active learning with
//! the controller attached, and [`eval`]/[`experiment`] produce the artifacts
//! the CLI writes.

pub mod active;
mod atomic;
pub mod bayes_linear;
pub mod bdnn;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gp;
pub mod lambert;
mod linalg;
pub mod stability;

pub use error::{Error, Result};
pub use lambert::lambert_w0;
pub use stability::{
    error_bound_width, martingale_threshold, replay_stop_step, stability_radius,
    stability_radius_general, Decision, KlPair, MartingaleParams, StoppingConfig, StoppingState,
};
