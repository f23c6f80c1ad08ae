//! Gaussian process regression with a unit-amplitude Gaussian kernel
//! `k(x, x') = exp(-|x - x'|^2 / (2 l^2))` and Gaussian noise of precision
//! `beta`, plus the closed-form KL divergences between the posteriors before
//! and after one observation.
//!
//! With the prior held fixed, the KL between two GP posteriors reduces to a
//! KL between their marginals on the observed inputs, and for a single new
//! point `(x, y)` it depends only on the previous predictive mean `mu` and
//! variance `s` at `x`:
//!
//! ```text
//! KL[q_{t-1} || q_t] = 1/2 (b s - ln(1 + b s)) + 1/2 (b s / (s + 1/b)) (y - mu)^2
//! KL[q_t || q_{t-1}] = 1/2 (ln(1 + b s) - s / (s + 1/b)) + 1/2 s (y - mu)^2 / (s + 1/b)^2
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{argmax_first, check_dim};
use crate::stability::clamp_kl;

const FALLBACK_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub noise_precision: f64,
}

impl GpHyper {
    pub fn new(lengthscale: f64, noise_precision: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(lengthscale) || !ok(noise_precision) {
            return Err(Error::InvalidParameter(format!(
                "lengthscale and noise precision must be positive, got l = {lengthscale}, beta = {noise_precision}"
            )));
        }
        Ok(Self {
            lengthscale,
            noise_precision,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        1.0 / self.noise_precision
    }
}

/// Grid searched by [`gp_fit_hyper`] when no explicit grid is given:
/// `l in {0.1, 0.2, 0.5, 1, 2, 5} * sqrt(D)`, `beta in {0.1, 1, 10, 100}`.
pub fn default_hyper_grid(dim: usize) -> Vec<GpHyper> {
    let scale = (dim.max(1) as f64).sqrt();
    let mut grid = Vec::with_capacity(24);
    for l in [0.1, 0.2, 0.5, 1.0, 2.0, 5.0] {
        for beta in [0.1, 1.0, 10.0, 100.0] {
            grid.push(GpHyper {
                lengthscale: l * scale,
                noise_precision: beta,
            });
        }
    }
    grid
}

pub fn kernel(a: &[f64], b: &[f64], lengthscale: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * sq / (lengthscale * lengthscale)).exp()
}

/// Training state of a GP: inputs, targets, the lower Cholesky factor of
/// `K + beta^-1 I`, `z = L^-1 y` and `alpha = (K + beta^-1 I)^-1 y`.
/// Immutable; [`GpState::extend`] returns a new state.
#[derive(Debug, Clone)]
pub struct GpState {
    hyper: GpHyper,
    dim: usize,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    chol: DMatrix<f64>,
    z: DVector<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    rebuilt: bool,
}

impl GpState {
    pub fn empty(hyper: GpHyper, dim: usize) -> Self {
        Self {
            hyper,
            dim,
            inputs: Vec::new(),
            targets: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            z: DVector::zeros(0),
            alpha: DVector::zeros(0),
            jitter: 0.0,
            rebuilt: false,
        }
    }

    pub fn from_data(hyper: GpHyper, dim: usize, inputs: &[&[f64]], targets: &[f64]) -> Result<Self> {
        check_dim(inputs.len(), targets.len())?;
        for x in inputs {
            check_dim(dim, x.len())?;
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("regression target"));
        }
        let owned: Vec<Vec<f64>> = inputs.iter().map(|x| x.to_vec()).collect();
        Self::build(hyper, dim, owned, targets.to_vec())
    }

    fn build(hyper: GpHyper, dim: usize, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        let gram = |jitter: f64| {
            DMatrix::from_fn(n, n, |i, j| {
                let k = kernel(&inputs[i], &inputs[j], hyper.lengthscale);
                if i == j {
                    k + hyper.noise_variance() + jitter
                } else {
                    k
                }
            })
        };
        let (chol, jitter) = match gram(0.0).cholesky() {
            Some(c) => (c, 0.0),
            None => {
                log::warn!("GP Gram matrix not positive definite; adding jitter {FALLBACK_JITTER}");
                let c = gram(FALLBACK_JITTER)
                    .cholesky()
                    .ok_or(Error::NotPositiveDefinite("GP Gram matrix"))?;
                (c, FALLBACK_JITTER)
            }
        };
        let l = chol.l();
        let y = DVector::from_column_slice(&targets);
        let z = l.solve_lower_triangular_unchecked(&y);
        let alpha = l.tr_solve_lower_triangular_unchecked(&z);
        Ok(Self {
            hyper,
            dim,
            inputs,
            targets,
            chol: l,
            z,
            alpha,
            jitter,
            rebuilt: true,
        })
    }

    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Lower Cholesky factor of `K + beta^-1 I`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `(K + beta^-1 I)^-1 y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Whether the factor was computed from scratch rather than appended to.
    pub fn was_rebuilt(&self) -> bool {
        self.rebuilt
    }

    fn cross_kernel(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| {
            kernel(&self.inputs[i], x, self.hyper.lengthscale)
        })
    }

    /// Appends one observation with a rank-one extension of the factor,
    /// falling back to a full rebuild if the new pivot is not positive.
    pub fn extend(&self, x: &[f64], y: f64) -> Result<GpState> {
        check_dim(self.dim, x.len())?;
        if !y.is_finite() {
            return Err(Error::NonFinite("regression target"));
        }
        let n = self.len();
        let k = self.cross_kernel(x);
        let row = self.chol.solve_lower_triangular_unchecked(&k);
        let pivot_sq = 1.0 + self.hyper.noise_variance() + self.jitter - row.norm_squared();

        let mut inputs = self.inputs.clone();
        inputs.push(x.to_vec());
        let mut targets = self.targets.clone();
        targets.push(y);

        if !(pivot_sq > 0.0 && pivot_sq.is_finite()) {
            return Self::build(self.hyper, self.dim, inputs, targets);
        }
        let pivot = pivot_sq.sqrt();
        let mut chol = self.chol.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            chol[(n, j)] = row[j];
        }
        chol[(n, n)] = pivot;
        let mut z = self.z.clone().resize_vertically(n + 1, 0.0);
        z[n] = (y - row.dot(&self.z)) / pivot;
        let alpha = chol.tr_solve_lower_triangular_unchecked(&z);
        Ok(GpState {
            hyper: self.hyper,
            dim: self.dim,
            inputs,
            targets,
            chol,
            z,
            alpha,
            jitter: self.jitter,
            rebuilt: false,
        })
    }

    /// Predictive mean and variance of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim, x.len())?;
        if self.is_empty() {
            return Ok((0.0, 1.0));
        }
        let k = self.cross_kernel(x);
        let v = self.chol.solve_lower_triangular_unchecked(&k);
        let mean = k.dot(&self.alpha);
        let var = (1.0 - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    /// Exact log marginal likelihood
    /// `-1/2 y^T (K + beta^-1 I)^-1 y - 1/2 ln det(K + beta^-1 I) - n/2 ln 2 pi`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let fit = self.z.norm_squared();
        let log_det: f64 = 2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        -0.5 * fit - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln()
    }
}

/// `gp_posterior`: predictive `(mean, variance)` at `x`.
pub fn gp_posterior(state: &GpState, x: &[f64]) -> Result<(f64, f64)> {
    state.posterior(x)
}

/// `x - ln(1 + x)` without cancellation for small `x`.
fn x_minus_log1p(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // sum_{k>=2} (-1)^k x^k / k
        let mut term = x * x;
        let mut acc = 0.0;
        for k in 2..20 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * term / k as f64;
            term *= x;
        }
        acc
    } else {
        x - x.ln_1p()
    }
}

/// `ln(1 + x) - x / (1 + x)` without cancellation for small `x`.
fn log1p_minus_ratio(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        // sum_{k>=2} (-1)^k (k - 1) / k x^k
        let mut term = x * x;
        let mut acc = 0.0;
        for k in 2..20 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * (k - 1) as f64 / k as f64 * term;
            term *= x;
        }
        acc
    } else {
        x.ln_1p() - x / (1.0 + x)
    }
}

fn validate_kl_inputs(variance: f64, residual: f64, beta: f64) -> Result<()> {
    if !residual.is_finite() {
        return Err(Error::NonFinite("regression target"));
    }
    if !(variance >= 0.0 && variance.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "predictive variance {variance} or noise precision {beta} out of range"
        )));
    }
    Ok(())
}

/// `KL[q_{t-1} || q_t]` from the previous predictive variance at the new
/// input, the residual `y - mu_{t-1}(x)` and the noise precision.
pub fn kl_backward_closed_form(variance: f64, residual: f64, beta: f64) -> Result<f64> {
    validate_kl_inputs(variance, residual, beta)?;
    if variance == 0.0 {
        return Ok(0.0);
    }
    let x = beta * variance;
    let kl = 0.5 * x_minus_log1p(x) + 0.5 * beta * x / (1.0 + x) * residual * residual;
    clamp_kl(kl)
}

/// `KL[q_t || q_{t-1}]`, arguments as in [`kl_backward_closed_form`].
pub fn kl_forward_closed_form(variance: f64, residual: f64, beta: f64) -> Result<f64> {
    validate_kl_inputs(variance, residual, beta)?;
    if variance == 0.0 {
        return Ok(0.0);
    }
    let x = beta * variance;
    let kl = 0.5 * log1p_minus_ratio(x) + 0.5 * beta * x / ((1.0 + x) * (1.0 + x)) * residual * residual;
    clamp_kl(kl)
}

/// `KL[q(f | S_{t-1}) || q(f | S_t)]` where `S_t = S_{t-1} + (x, y)` and
/// `state_before` is the posterior given `S_{t-1}`.
pub fn gp_incremental_kl_backward(state_before: &GpState, x: &[f64], y: f64) -> Result<f64> {
    let (mu, var) = state_before.posterior(x)?;
    kl_backward_closed_form(var, y - mu, state_before.hyper.noise_precision)
}

/// `KL[q(f | S_t) || q(f | S_{t-1})]`, arguments as in
/// [`gp_incremental_kl_backward`].
pub fn gp_incremental_kl_forward(state_before: &GpState, x: &[f64], y: f64) -> Result<f64> {
    let (mu, var) = state_before.posterior(x)?;
    kl_forward_closed_form(var, y - mu, state_before.hyper.noise_precision)
}

/// Grid candidate with the largest log marginal likelihood on `(inputs,
/// targets)`; ties keep the earlier candidate.
pub fn gp_fit_hyper(inputs: &[&[f64]], targets: &[f64], grid: &[GpHyper]) -> Result<GpHyper> {
    if inputs.len() < 2 {
        return Err(Error::InsufficientData(
            "marginal-likelihood fit needs at least two points".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("hyperparameter grid is empty".into()));
    }
    let dim = inputs[0].len();
    let mut best: Option<(GpHyper, f64)> = None;
    for &hyper in grid {
        let lml = match GpState::from_data(hyper, dim, inputs, targets) {
            Ok(state) => state.log_marginal_likelihood(),
            Err(Error::NotPositiveDefinite(_)) => continue,
            Err(e) => return Err(e),
        };
        if !lml.is_finite() {
            continue;
        }
        match best {
            Some((_, b)) if lml <= b => {}
            _ => best = Some((hyper, lml)),
        }
    }
    best.map(|(h, _)| h)
        .ok_or(Error::NotPositiveDefinite("every grid candidate's Gram matrix"))
}

/// Predictive variances at many points, through one triangular solve.
pub fn gp_variances(state: &GpState, points: &[&[f64]]) -> Result<Vec<f64>> {
    for x in points {
        check_dim(state.dim, x.len())?;
    }
    if state.is_empty() {
        return Ok(vec![1.0; points.len()]);
    }
    let cross = DMatrix::from_fn(state.len(), points.len(), |i, j| {
        kernel(&state.inputs[i], points[j], state.hyper.lengthscale)
    });
    let v = state.chol.solve_lower_triangular_unchecked(&cross);
    Ok(v.column_iter()
        .map(|c| (1.0 - c.norm_squared()).max(0.0))
        .collect())
}

/// Index of the candidate with the largest predictive variance; ties go to
/// the lowest index.
pub fn gp_acquisition(state: &GpState, candidates: &[&[f64]]) -> Result<usize> {
    argmax_first(gp_variances(state, candidates)?).ok_or(Error::EmptyCandidates)
}

/// Predictive means and variances at a fixed set of points, kept current as
/// the training set grows one observation at a time. Each update costs
/// `O(n)` per tracked point instead of a fresh `O(n^2)` solve.
#[derive(Debug, Clone)]
pub struct PosteriorCache {
    points: Vec<Vec<f64>>,
    /// Per point, `L^-1 k(X, x)`.
    projections: Vec<Vec<f64>>,
    means: Vec<f64>,
    variances: Vec<f64>,
    trained_on: usize,
}

impl PosteriorCache {
    pub fn new(state: &GpState, points: Vec<Vec<f64>>) -> Result<Self> {
        for x in &points {
            check_dim(state.dim, x.len())?;
        }
        let mut cache = Self {
            projections: Vec::new(),
            means: Vec::new(),
            variances: Vec::new(),
            trained_on: 0,
            points,
        };
        cache.rebuild(state);
        Ok(cache)
    }

    fn rebuild(&mut self, state: &GpState) {
        let n = state.len();
        self.projections.clear();
        self.means.clear();
        self.variances.clear();
        for x in &self.points {
            let v = if n == 0 {
                DVector::zeros(0)
            } else {
                state
                    .chol
                    .solve_lower_triangular_unchecked(&state.cross_kernel(x))
            };
            self.means.push(v.dot(&state.z));
            self.variances.push((1.0 - v.norm_squared()).max(0.0));
            self.projections.push(v.as_slice().to_vec());
        }
        self.trained_on = n;
    }

    /// Brings the cache up to date with `state`, which must be the state the
    /// cache last saw extended by at most one observation.
    pub fn update(&mut self, state: &GpState) {
        let n = state.len();
        if state.was_rebuilt() || n != self.trained_on + 1 {
            self.rebuild(state);
            return;
        }
        let last = n - 1;
        let row = state.chol.row(last);
        let pivot = row[last];
        let z_new = state.z[last];
        let x_new = &state.inputs[last];
        for (i, x) in self.points.iter().enumerate() {
            let proj = &mut self.projections[i];
            let dot: f64 = proj.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            let c = (kernel(x, x_new, state.hyper.lengthscale) - dot) / pivot;
            proj.push(c);
            self.means[i] += c * z_new;
            self.variances[i] = (self.variances[i] - c * c).max(0.0);
        }
        self.trained_on = n;
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Drops the point at `index` (order of the remaining points is kept).
    pub fn remove(&mut self, index: usize) {
        self.points.remove(index);
        self.projections.remove(index);
        self.means.remove(index);
        self.variances.remove(index);
    }
}
