//! Bayesian ridge regression over an RBF basis.
//!
//! Prior `w ~ N(0, alpha^-1 I)`, likelihood `y_i ~ N(w^T psi(x_i), beta^-1)`.
//! The posterior precision is `beta Psi Psi^T + alpha I` and the mean solves
//! `Lambda mu = beta Psi y`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::basis::{design_matrix, RbfBasis};
use super::gaussian::GaussianPosterior;
use crate::error::{Error, Result};
use crate::linalg::{argmax_first, check_dim};

pub const HYPER_MIN: f64 = 1e-8;
pub const HYPER_MAX: f64 = 1e8;
const HYPER_REL_TOL: f64 = 1e-6;
const HYPER_MAX_ITERS: usize = 100;

/// Prior precision `alpha` and noise precision `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrrHyper {
    pub alpha: f64,
    pub beta: f64,
}

impl BrrHyper {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(alpha) || !ok(beta) {
            return Err(Error::InvalidParameter(format!(
                "alpha and beta must be positive and finite, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for BrrHyper {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Sufficient statistics `Psi Psi^T` and `Psi y` of a labeled set. Points can
/// be appended one at a time, which is all the active-learning loop needs.
#[derive(Debug, Clone)]
pub struct RidgeMoments {
    gram: DMatrix<f64>,
    proj: DVector<f64>,
    count: usize,
}

impl RidgeMoments {
    pub fn new(features: usize) -> Self {
        Self {
            gram: DMatrix::zeros(features, features),
            proj: DVector::zeros(features),
            count: 0,
        }
    }

    pub fn from_data(basis: &RbfBasis, inputs: &[&[f64]], targets: &[f64]) -> Result<Self> {
        check_dim(inputs.len(), targets.len())?;
        let mut moments = Self::new(basis.len());
        for (x, &y) in inputs.iter().zip(targets) {
            moments.push(&basis.features(x)?, y)?;
        }
        Ok(moments)
    }

    pub fn push(&mut self, psi: &DVector<f64>, y: f64) -> Result<()> {
        check_dim(self.proj.len(), psi.len())?;
        if !y.is_finite() {
            return Err(Error::NonFinite("regression target"));
        }
        self.gram.ger(1.0, psi, psi, 1.0);
        self.proj.axpy(y, psi, 1.0);
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn posterior(&self, hyper: BrrHyper) -> Result<GaussianPosterior> {
        let j = self.proj.len();
        let precision = &self.gram * hyper.beta + DMatrix::identity(j, j) * hyper.alpha;
        let chol = crate::linalg::cholesky(precision.clone(), "ridge posterior precision")?;
        let mean = chol.solve(&(&self.proj * hyper.beta));
        GaussianPosterior::from_precision(mean, precision)
    }
}

pub fn brr_posterior(
    basis: &RbfBasis,
    hyper: BrrHyper,
    inputs: &[&[f64]],
    targets: &[f64],
) -> Result<GaussianPosterior> {
    RidgeMoments::from_data(basis, inputs, targets)?.posterior(hyper)
}

/// Result of the evidence fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperFit {
    pub hyper: BrrHyper,
    pub iterations: usize,
    pub converged: bool,
}

/// Precomputed spectrum of `Psi Psi^T` for the evidence updates.
struct Evidence {
    psi: DMatrix<f64>,
    targets: DVector<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
    /// `Q^T Psi y`
    rotated_proj: DVector<f64>,
}

impl Evidence {
    fn new(basis: &RbfBasis, inputs: &[&[f64]], targets: &[f64]) -> Result<Self> {
        check_dim(inputs.len(), targets.len())?;
        let psi = design_matrix(basis, inputs)?;
        let targets = DVector::from_column_slice(targets);
        let eig = SymmetricEigen::new(&psi * psi.transpose());
        let rotated_proj = eig.eigenvectors.transpose() * (&psi * &targets);
        Ok(Self {
            psi,
            targets,
            eigvals: eig.eigenvalues.map(|v| v.max(0.0)),
            eigvecs: eig.eigenvectors,
            rotated_proj,
        })
    }

    fn step(&self, hyper: BrrHyper) -> BrrHyper {
        let BrrHyper { alpha, beta } = hyper;
        // mu = Q diag(beta / (beta lambda_i + alpha)) Q^T Psi y
        let scaled = DVector::from_fn(self.eigvals.len(), |i, _| {
            beta * self.rotated_proj[i] / (beta * self.eigvals[i] + alpha)
        });
        let mu = &self.eigvecs * scaled;
        let tau: f64 = self
            .eigvals
            .iter()
            .map(|&l| beta * l / (beta * l + alpha))
            .sum();
        let residual = (&self.targets - self.psi.transpose() * &mu).norm_squared();
        let n = self.targets.len() as f64;

        let alpha_new = clamp_hyper(tau / mu.norm_squared());
        let beta_new = if n - tau <= 0.0 {
            HYPER_MAX
        } else {
            clamp_hyper((n - tau) / residual)
        };
        BrrHyper {
            alpha: alpha_new,
            beta: beta_new,
        }
    }
}

fn clamp_hyper(v: f64) -> f64 {
    if v.is_nan() {
        HYPER_MAX
    } else {
        v.clamp(HYPER_MIN, HYPER_MAX)
    }
}

/// One evidence update `alpha = tau / mu^T mu`, `1/beta = |y - Psi^T mu|^2 / (n - tau)`
/// with `tau = sum_i tau_i / (tau_i + alpha)` over the eigenvalues of
/// `beta Psi Psi^T`.
pub fn brr_hyper_step(
    basis: &RbfBasis,
    hyper: BrrHyper,
    inputs: &[&[f64]],
    targets: &[f64],
) -> Result<BrrHyper> {
    Ok(Evidence::new(basis, inputs, targets)?.step(hyper))
}

/// Iterates the evidence updates from `hyper` until both parameters move by
/// less than `1e-6` relative, or 100 iterations. Non-convergence is reported
/// through [`HyperFit::converged`], not as an error.
pub fn brr_update_hyper(
    basis: &RbfBasis,
    hyper: BrrHyper,
    inputs: &[&[f64]],
    targets: &[f64],
) -> Result<HyperFit> {
    if inputs.len() < 2 {
        return Err(Error::InsufficientData(
            "evidence maximization needs at least two points".into(),
        ));
    }
    let evidence = Evidence::new(basis, inputs, targets)?;
    let mut current = BrrHyper {
        alpha: clamp_hyper(hyper.alpha),
        beta: clamp_hyper(hyper.beta),
    };
    for iteration in 1..=HYPER_MAX_ITERS {
        let next = evidence.step(current);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        let done = rel(next.alpha, current.alpha) < HYPER_REL_TOL
            && rel(next.beta, current.beta) < HYPER_REL_TOL;
        current = next;
        if done {
            return Ok(HyperFit {
                hyper: current,
                iterations: iteration,
                converged: true,
            });
        }
    }
    log::warn!(
        "evidence iteration did not converge in {HYPER_MAX_ITERS} steps; using alpha = {}, beta = {}",
        current.alpha,
        current.beta
    );
    Ok(HyperFit {
        hyper: current,
        iterations: HYPER_MAX_ITERS,
        converged: false,
    })
}

/// Predictive variance of the latent function, `psi(x)^T Sigma psi(x)`.
pub fn brr_predictive_variance(
    posterior: &GaussianPosterior,
    basis: &RbfBasis,
    x: &[f64],
) -> Result<f64> {
    Ok(posterior.covariance_quad(&basis.features(x)?))
}

/// Index of the candidate with the largest predictive variance; ties go to
/// the lowest index.
pub fn brr_acquisition(
    posterior: &GaussianPosterior,
    basis: &RbfBasis,
    candidates: &[&[f64]],
) -> Result<usize> {
    let scores = candidates
        .iter()
        .map(|x| brr_predictive_variance(posterior, basis, x))
        .collect::<Result<Vec<_>>>()?;
    argmax_first(scores).ok_or(Error::EmptyCandidates)
}
