//! Bayesian ridge and logistic regression over an additive RBF basis, with
//! closed-form KL divergences between their Gaussian posteriors.

mod basis;
mod gaussian;
mod logistic;
mod ridge;

pub use basis::{design_matrix, RbfBasis};
pub use gaussian::{gaussian_kl, GaussianPosterior};
pub use logistic::{
    binary_entropy, blr_laplace_posterior, blr_map, blr_map_from, blr_predict,
    entropy_acquisition, laplace_at, sigmoid,
};
pub use ridge::{
    brr_acquisition, brr_hyper_step, brr_posterior, brr_predictive_variance, brr_update_hyper,
    BrrHyper, HyperFit, RidgeMoments, HYPER_MAX, HYPER_MIN,
};
