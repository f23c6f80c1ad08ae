use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::Result;
use crate::linalg::{check_dim, cholesky, log_det, max_abs};
use crate::stability::clamp_kl;

/// Multivariate normal over the basis weights, parameterized by its
/// precision. The precision's Cholesky factor and the covariance are cached.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    precision_chol: Cholesky<f64, Dyn>,
    covariance: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn from_precision(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), precision.nrows())?;
        check_dim(mean.len(), precision.ncols())?;
        let precision = symmetrize(precision);
        let precision_chol = cholesky(precision.clone(), "posterior precision")?;
        let covariance = precision_chol.inverse();
        Ok(Self {
            mean,
            precision,
            precision_chol,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor `L` of the precision, `Lambda = L L^T`.
    pub fn precision_factor(&self) -> DMatrix<f64> {
        self.precision_chol.l()
    }

    pub fn log_det_precision(&self) -> f64 {
        log_det(&self.precision_chol)
    }

    /// `v^T Sigma v`, evaluated through the precision factor.
    pub fn covariance_quad(&self, v: &DVector<f64>) -> f64 {
        let z = self
            .precision_chol
            .l_dirty()
            .solve_lower_triangular_unchecked(v);
        z.norm_squared()
    }

    /// Max-norm of `Sigma * Lambda - I`.
    pub fn identity_residual(&self) -> f64 {
        let n = self.dim();
        max_abs(&(&self.covariance * &self.precision - DMatrix::identity(n, n)))
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `KL[p || q]` between two Gaussians of equal dimension:
/// `1/2 { tr(Lq Sp) - log det(Lq Sp) + (mq - mp)^T Lq (mq - mp) - J }`
/// with `Lq` the precision of `q` and `Sp` the covariance of `p`.
pub fn gaussian_kl(p: &GaussianPosterior, q: &GaussianPosterior) -> Result<f64> {
    check_dim(p.dim(), q.dim())?;
    let lp = p.precision_chol.l_dirty();
    let lq = q.precision_chol.l_dirty();
    // tr(Lambda_q Sigma_p) = ||Lp^{-1} Lq||_F^2
    let x = lp.solve_lower_triangular_unchecked(&lq.lower_triangle());
    let trace = x.norm_squared();
    let d = &q.mean - &p.mean;
    let maha = (lq.lower_triangle().transpose() * d).norm_squared();
    let log_det_ratio = p.log_det_precision() - q.log_det_precision();
    let kl = 0.5 * (trace + maha - p.dim() as f64 + log_det_ratio);
    clamp_kl(kl)
}
