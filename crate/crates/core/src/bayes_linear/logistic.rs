//! Bayesian logistic regression with a Laplace-approximated posterior.

use nalgebra::{DMatrix, DVector};

use super::basis::{design_matrix, RbfBasis};
use super::gaussian::GaussianPosterior;
use crate::error::{Error, Result};
use crate::linalg::{argmax_first, check_dim, cholesky};

const NEWTON_MAX_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 60;
const ROUNDOFF: f64 = 1e-13;

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// Binary entropy in nats with `0 ln 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

fn validate_labels(labels: &[f64]) -> Result<()> {
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidParameter(
            "classification labels must be 0 or 1".into(),
        ));
    }
    Ok(())
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "prior precision must be positive, got {alpha}"
        )))
    }
}

struct Problem<'a> {
    psi: DMatrix<f64>,
    labels: &'a [f64],
    alpha: f64,
}

impl Problem<'_> {
    fn objective(&self, w: &DVector<f64>) -> f64 {
        let a = self.psi.tr_mul(w);
        let nll: f64 = a
            .iter()
            .zip(self.labels)
            .map(|(&ai, &yi)| softplus(ai) - yi * ai)
            .sum();
        nll + 0.5 * self.alpha * w.norm_squared()
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let a = self.psi.tr_mul(w);
        let resid = DVector::from_fn(a.len(), |i, _| sigmoid(a[i]) - self.labels[i]);
        &self.psi * resid + w * self.alpha
    }

    /// `alpha I + sum_i s_i (1 - s_i) psi_i psi_i^T`
    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let j = w.len();
        let a = self.psi.tr_mul(w);
        let mut weighted = self.psi.clone();
        for (i, mut col) in weighted.column_iter_mut().enumerate() {
            let s = sigmoid(a[i]);
            col *= s * (1.0 - s);
        }
        &weighted * self.psi.transpose() + DMatrix::identity(j, j) * self.alpha
    }
}

/// MAP weights by damped Newton iteration on the penalized Bernoulli
/// log-likelihood, optionally warm-started.
pub fn blr_map_from(
    basis: &RbfBasis,
    alpha: f64,
    inputs: &[&[f64]],
    labels: &[f64],
    init: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    validate_alpha(alpha)?;
    check_dim(inputs.len(), labels.len())?;
    validate_labels(labels)?;
    let problem = Problem {
        psi: design_matrix(basis, inputs)?,
        labels,
        alpha,
    };
    let mut w = match init {
        Some(w0) => {
            check_dim(basis.len(), w0.len())?;
            w0.clone()
        }
        None => DVector::zeros(basis.len()),
    };
    let mut f = problem.objective(&w);
    for _ in 0..NEWTON_MAX_ITERS {
        let g = problem.gradient(&w);
        if g.norm() <= GRAD_TOL * w.norm().max(1.0) {
            return Ok(w);
        }
        let h = cholesky(problem.hessian(&w), "logistic Hessian")?;
        let direction = h.solve(&g);
        // Below objective roundoff the line search cannot see progress; the
        // iterate is in the quadratic regime, so take the full step.
        if g.dot(&direction) <= ROUNDOFF * f.abs().max(1.0) {
            w -= &direction;
            f = problem.objective(&w);
            continue;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let candidate = &w - &direction * step;
            let fc = problem.objective(&candidate);
            if fc <= f {
                w = candidate;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No decrease is representable; accept if already stationary.
            let g = problem.gradient(&w);
            if g.norm() <= GRAD_TOL * w.norm().max(1.0) {
                return Ok(w);
            }
            break;
        }
    }
    let g = problem.gradient(&w);
    if g.norm() <= GRAD_TOL * w.norm().max(1.0) {
        return Ok(w);
    }
    Err(Error::NoConvergence {
        iterations: NEWTON_MAX_ITERS,
    })
}

pub fn blr_map(basis: &RbfBasis, alpha: f64, inputs: &[&[f64]], labels: &[f64]) -> Result<DVector<f64>> {
    blr_map_from(basis, alpha, inputs, labels, None)
}

/// Builds the Laplace posterior at a known MAP point: mean `w_map`,
/// precision the negative log-posterior Hessian there.
pub fn laplace_at(
    basis: &RbfBasis,
    alpha: f64,
    inputs: &[&[f64]],
    labels: &[f64],
    w_map: DVector<f64>,
) -> Result<GaussianPosterior> {
    validate_alpha(alpha)?;
    let problem = Problem {
        psi: design_matrix(basis, inputs)?,
        labels,
        alpha,
    };
    let h = problem.hessian(&w_map);
    GaussianPosterior::from_precision(w_map, h)
}

/// `N(w_map, H^-1)` with `H = alpha I + sum_i s_i (1 - s_i) psi_i psi_i^T`.
pub fn blr_laplace_posterior(
    basis: &RbfBasis,
    alpha: f64,
    inputs: &[&[f64]],
    labels: &[f64],
) -> Result<GaussianPosterior> {
    let w = blr_map(basis, alpha, inputs, labels)?;
    laplace_at(basis, alpha, inputs, labels, w)
}

/// Plug-in class-1 probability `sigmoid(w_map^T psi(x))`.
pub fn blr_predict(posterior: &GaussianPosterior, basis: &RbfBasis, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(posterior.mean().dot(&basis.features(x)?)))
}

/// Index of the candidate with the largest predictive entropy; ties go to the
/// lowest index.
pub fn entropy_acquisition(
    posterior: &GaussianPosterior,
    basis: &RbfBasis,
    candidates: &[&[f64]],
) -> Result<usize> {
    let scores = candidates
        .iter()
        .map(|x| blr_predict(posterior, basis, x).map(binary_entropy))
        .collect::<Result<Vec<_>>>()?;
    argmax_first(scores).ok_or(Error::EmptyCandidates)
}
