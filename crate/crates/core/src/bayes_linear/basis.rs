use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::check_dim;

/// Additive Gaussian RBF basis: `D * M` features
/// `psi_{md}(x) = exp(-(x_d - xi_m)^2 / (2 l^2))`, with the same `M` centers
/// shared by every input dimension. Feature `d * M + m` pairs dimension `d`
/// with center `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfBasis {
    dims: usize,
    centers: Vec<f64>,
    bandwidth: f64,
}

impl RbfBasis {
    pub fn new(dims: usize, centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if dims == 0 || centers.is_empty() {
            return Err(Error::InvalidParameter(
                "basis needs at least one dimension and one center".into(),
            ));
        }
        if centers.iter().any(|c| !c.is_finite()) || centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "basis centers must be finite and strictly increasing".into(),
            ));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            dims,
            centers,
            bandwidth,
        })
    }

    /// `count` centers equally spaced over `[lo, hi]` with bandwidth equal to
    /// the spacing. A degenerate range is widened to unit length.
    pub fn equally_spaced(dims: usize, count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("basis needs at least one center".into()));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::InvalidParameter(format!("invalid center range [{lo}, {hi}]")));
        }
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        if count == 1 {
            return Self::new(dims, vec![0.5 * (lo + hi)], hi - lo);
        }
        let step = (hi - lo) / (count - 1) as f64;
        let centers = (0..count).map(|i| lo + step * i as f64).collect();
        Self::new(dims, centers, step)
    }

    /// Spreads `count` centers over the smallest and largest feature value
    /// observed in `inputs`, across all dimensions.
    pub fn from_inputs(dims: usize, count: usize, inputs: &[&[f64]]) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in inputs {
            check_dim(dims, x.len())?;
            for &v in x.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if inputs.is_empty() {
            return Err(Error::InsufficientData("no inputs to place basis centers".into()));
        }
        Self::equally_spaced(dims, count, lo, hi)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Total feature count `J = D * M`.
    pub fn len(&self) -> usize {
        self.dims * self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dims, x.len())?;
        let m = self.centers.len();
        let scale = -0.5 / (self.bandwidth * self.bandwidth);
        Ok(DVector::from_fn(self.len(), |j, _| {
            let diff = x[j / m] - self.centers[j % m];
            (scale * diff * diff).exp()
        }))
    }
}

/// `J x n` matrix whose column `i` is the feature vector of `inputs[i]`.
pub fn design_matrix(basis: &RbfBasis, inputs: &[&[f64]]) -> Result<DMatrix<f64>> {
    let mut psi = DMatrix::zeros(basis.len(), inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        psi.set_column(i, &basis.features(x)?);
    }
    Ok(psi)
}
