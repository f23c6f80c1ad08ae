//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the routines it is used to check: Lambert W is
//! solved by bisection, Gaussian KLs go through covariance inverses from LU
//! rather than precision Cholesky factors, and GP posteriors are formed by
//! dense solves over explicit kernel matrices.
#![allow(dead_code)]

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Principal-branch Lambert W by bisection on `w e^w = x`, `w >= -1`.
pub fn w0_bisection(x: f64) -> f64 {
    assert!(x >= -1.0 / E - 1e-15, "below branch point: {x}");
    if x <= -1.0 / E {
        return -1.0;
    }
    let mut lo = -1.0_f64;
    let mut hi = if x <= E { 1.0 } else { x.ln() };
    while hi * hi.exp() < x {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mid * mid.exp() < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn radius_oracle(kl: f64) -> f64 {
    (w0_bisection((kl - 1.0) / E) + 1.0).exp() - 1.0
}

pub fn general_radius_oracle(kl: f64, v: f64, range: f64) -> f64 {
    let u = (range * range * kl - v) / (v * E);
    v / range * ((w0_bisection(u) + 1.0).exp() - 1.0)
}

fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible matrix")
}

fn log_det(m: &DMatrix<f64>) -> f64 {
    let d = m.clone().lu().determinant();
    assert!(d > 0.0, "determinant {d} not positive");
    d.ln()
}

/// `KL[N(mp, cp) || N(mq, cq)]` from covariance matrices.
pub fn dense_gaussian_kl(mp: &DVector<f64>, cp: &DMatrix<f64>, mq: &DVector<f64>, cq: &DMatrix<f64>) -> f64 {
    let k = mp.len() as f64;
    let iq = inverse(cq);
    let d = mq - mp;
    0.5 * ((&iq * cp).trace() + (d.transpose() * &iq * &d)[(0, 0)] - k + log_det(cq) - log_det(cp))
}

/// Multivariate normal log density with precomputed inverse and log det.
pub struct Mvn {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_norm: f64,
}

impl Mvn {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let k = mean.len() as f64;
        let factor = cov.clone().cholesky().expect("covariance is SPD").l();
        let log_norm = -0.5 * (k * (2.0 * PI).ln() + log_det(&cov));
        Self {
            inv: inverse(&cov),
            mean,
            factor,
            log_norm,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        self.log_norm - 0.5 * (d.transpose() * &self.inv * &d)[(0, 0)]
    }
}

/// Sample mean and standard error of `f` over `n` draws.
pub fn mean_and_se(n: usize, mut f: impl FnMut() -> f64) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let v = f();
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Monte-Carlo estimate of `KL[p || q]` with its standard error.
pub fn mc_gaussian_kl(p: &Mvn, q: &Mvn, n: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    mean_and_se(n, || {
        let x = p.sample(rng);
        p.log_pdf(&x) - q.log_pdf(&x)
    })
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * ridge
}

pub fn rbf(a: &[f64], b: &[f64], l: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * l * l)).exp()
}

pub fn gram(a: &[Vec<f64>], b: &[Vec<f64>], l: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| rbf(&a[i], &b[j], l))
}

/// GP posterior of `f` at `eval` given noisy observations, by dense solves.
pub fn gp_dense_posterior(
    obs: &[Vec<f64>],
    y: &[f64],
    eval: &[Vec<f64>],
    l: f64,
    beta: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let kee = gram(eval, eval, l);
    if obs.is_empty() {
        return (DVector::zeros(eval.len()), kee);
    }
    let koo = gram(obs, obs, l) + DMatrix::identity(obs.len(), obs.len()) / beta;
    let keo = gram(eval, obs, l);
    let inv = inverse(&koo);
    let mean = &keo * &inv * DVector::from_column_slice(y);
    let cov = kee - &keo * &inv * keo.transpose();
    (mean, cov)
}

/// Exact GP log marginal likelihood by dense determinant and inverse.
pub fn gp_dense_log_marginal(obs: &[Vec<f64>], y: &[f64], l: f64, beta: f64) -> f64 {
    let n = obs.len();
    let c = gram(obs, obs, l) + DMatrix::identity(n, n) / beta;
    let yv = DVector::from_column_slice(y);
    -0.5 * (yv.transpose() * inverse(&c) * &yv)[(0, 0)] - 0.5 * log_det(&c) - 0.5 * n as f64 * (2.0 * PI).ln()
}

/// `n` points in `[0, side]^dim` pairwise at least `min_dist` apart.
pub fn separated_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, side: f64, min_dist: f64) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut attempts = 0;
    while pts.len() < n {
        attempts += 1;
        assert!(attempts < 1_000_000, "could not place {n} separated points");
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
        let ok = pts.iter().all(|p| {
            p.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= min_dist * min_dist
        });
        if ok {
            pts.push(x);
        }
    }
    pts
}

/// Noisy sine regression data: `x ~ U(-3, 3)`, `y = sin(x) + N(0, noise^2)`.
pub fn noisy_sine(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
    let ys = xs
        .iter()
        .map(|x| x[0].sin() + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (xs, ys)
}

/// Additive RBF features `exp(-(x_d - c_m)^2 / (2 l^2))` at index `d M + m`.
pub fn rbf_features(x: &[f64], centers: &[f64], l: f64) -> DVector<f64> {
    let m = centers.len();
    DVector::from_fn(x.len() * m, |j, _| {
        let (d, c) = (j / m, j % m);
        (-(x[d] - centers[c]).powi(2) / (2.0 * l * l)).exp()
    })
}

/// Negative log posterior of Bayesian logistic regression, written directly.
pub fn logistic_neg_log_posterior(w: &DVector<f64>, feats: &[DVector<f64>], labels: &[f64], alpha: f64) -> f64 {
    let mut total = 0.5 * alpha * w.norm_squared();
    for (psi, &y) in feats.iter().zip(labels) {
        let a = w.dot(psi);
        let p = 1.0 / (1.0 + (-a).exp());
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total
}

/// Central finite-difference Hessian.
pub fn fd_hessian(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let e = |di: f64, dj: f64| {
            let mut y = x.clone();
            y[i] += di;
            y[j] += dj;
            f(&y)
        };
        (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h)
    })
}

/// Log density of `p N(m, s I) + (1 - p) N(0, s I)` with `0 <= p <= 1`.
pub fn mixture_log_pdf(x: &DVector<f64>, m: &DVector<f64>, s: f64, p: f64) -> f64 {
    let k = x.len() as f64;
    let base = -0.5 * k * (2.0 * PI * s).ln();
    let a = p.ln() + base - (x - m).norm_squared() / (2.0 * s);
    let b = (1.0 - p).ln() + base - x.norm_squared() / (2.0 * s);
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Monte-Carlo `KL` between two scalar-variance mixtures over `R^k`, with its
/// standard error.
pub fn mc_mixture_kl(
    (mp, sp, pp): (&DVector<f64>, f64, f64),
    (mq, sq, pq): (&DVector<f64>, f64, f64),
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let k = mp.len();
    mean_and_se(n, || {
        let on = rng.random::<f64>() < pp;
        let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = if on { mp + z * sp.sqrt() } else { z * sp.sqrt() };
        mixture_log_pdf(&x, mp, sp, pp) - mixture_log_pdf(&x, mq, sq, pq)
    })
}

/// `KL[N(a, s I) || N(b, t I)]` over `R^k`.
pub fn isotropic_gaussian_kl(a: &DVector<f64>, s: f64, b: &DVector<f64>, t: f64) -> f64 {
    let k = a.len() as f64;
    0.5 * (k * s / t + (a - b).norm_squared() / t - k + k * (t / s).ln())
}
