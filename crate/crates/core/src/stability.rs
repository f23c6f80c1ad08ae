//! Stability radii and the error-ratio stopping controller.
//!
//! For posteriors `p` and `q` and a loss bounded in `[a, b]`, the gap
//! `E_p[L] - E_q[L]` lies in `[-(b-a) r(q, p), (b-a) r(p, q)]` where
//! `r(p, q) = exp(W0((KL[p||q] - 1) / e) + 1) - 1`. The controller sums the
//! two directed radii between consecutive posteriors, normalizes by the
//! smallest sum seen during warm-up and stops once the ratio drops to the
//! threshold. Nothing here knows about models; it consumes KL values only.

use crate::error::{Error, Result};
use crate::lambert::w0p1_from_offset;

/// KL values in `[-KL_ROUNDOFF, 0)` are clamped to zero.
pub const KL_ROUNDOFF: f64 = 1e-10;

/// Validates a KL value, clamping small negative roundoff to zero.
pub fn clamp_kl(kl: f64) -> Result<f64> {
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL divergence"));
    }
    if kl < -KL_ROUNDOFF {
        return Err(Error::NegativeKl(kl));
    }
    Ok(kl.max(0.0))
}

/// Both directed KL divergences between consecutive posteriors, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlPair {
    forward: f64,
    backward: f64,
}

impl KlPair {
    /// `forward` is `KL[p_t || p_{t-1}]`, `backward` is `KL[p_{t-1} || p_t]`.
    pub fn new(forward: f64, backward: f64) -> Result<Self> {
        Ok(Self {
            forward: clamp_kl(forward)?,
            backward: clamp_kl(backward)?,
        })
    }

    pub fn forward(&self) -> f64 {
        self.forward
    }

    pub fn backward(&self) -> f64 {
        self.backward
    }
}

/// `exp(W0((kl - 1)/e) + 1) - 1`; zero exactly at `kl = 0` and strictly
/// increasing.
pub fn stability_radius(kl: f64) -> Result<f64> {
    Ok(radius_of_valid(clamp_kl(kl)?))
}

fn radius_of_valid(kl: f64) -> f64 {
    w0p1_from_offset(kl).exp_m1()
}

/// Radius for a loss with range `range = b - a` and second-moment bound
/// `v >= E[(L - a)^2]`. Returns a bound on the gap itself (already scaled by
/// the range), so `v = range^2` gives `range * stability_radius(kl)`.
pub fn stability_radius_general(kl: f64, v: f64, range: f64) -> Result<f64> {
    let kl = clamp_kl(kl)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "second-moment bound must be positive, got {v}"
        )));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "loss range must be positive, got {range}"
        )));
    }
    Ok((v / range) * w0p1_from_offset(range * range * kl / v).exp_m1())
}

/// `r_t = r(p_t, p_{t-1}) + r(p_{t-1}, p_t)`; `|dL_t| <= (b - a) r_t`.
pub fn error_bound_width(pair: KlPair) -> f64 {
    radius_of_valid(pair.forward) + radius_of_valid(pair.backward)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Threshold, warm-up length and minimum step count of one controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingConfig {
    /// Error-ratio threshold in `[0, 1]`.
    pub threshold: f64,
    /// Number of initial radii whose minimum becomes the normalizer.
    pub warmup: usize,
    /// No stop is reported before this many acquisitions.
    pub min_steps: usize,
}

impl StoppingConfig {
    pub fn new(threshold: f64, warmup: usize, min_steps: usize) -> Result<Self> {
        let config = Self {
            threshold,
            warmup,
            min_steps,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.warmup == 0 || self.min_steps == 0 {
            return Err(Error::InvalidParameter(
                "warm-up length and minimum steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            warmup: 10,
            min_steps: 10,
        }
    }
}

/// Outcome of one controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub decision: Decision,
    pub radius: f64,
    /// Unset until the normalizer exists.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingState {
    config: StoppingConfig,
    t: usize,
    radius_history: Vec<f64>,
    gamma_tilde: Option<f64>,
    lambda_history: Vec<Option<f64>>,
    stopped: bool,
}

impl StoppingState {
    pub fn new(config: StoppingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            radius_history: Vec::new(),
            gamma_tilde: None,
            lambda_history: Vec::new(),
            stopped: false,
        })
    }

    pub fn config(&self) -> &StoppingConfig {
        &self.config
    }

    /// Number of acquisitions seen so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn radius_history(&self) -> &[f64] {
        &self.radius_history
    }

    pub fn lambda_history(&self) -> &[Option<f64>] {
        &self.lambda_history
    }

    pub fn gamma_tilde(&self) -> Option<f64> {
        self.gamma_tilde
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Feeds the KL pair of the newest acquisition.
    pub fn step(&mut self, pair: KlPair) -> Result<Step> {
        self.push_radius(error_bound_width(pair))
    }

    /// Feeds a precomputed radius `r_t`. The state is left untouched on error.
    pub fn push_radius(&mut self, radius: f64) -> Result<Step> {
        if self.stopped {
            return Err(Error::AlreadyStopped);
        }
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stability radius must be finite and nonnegative, got {radius}"
            )));
        }
        let t = self.t + 1;
        let m = self.config.warmup;

        let gamma = match self.gamma_tilde {
            Some(g) => Some(g),
            None if t == m => {
                let g = self
                    .radius_history
                    .iter()
                    .copied()
                    .fold(radius, f64::min);
                if g <= 0.0 {
                    return Err(Error::DegenerateNormalizer { warmup: m });
                }
                Some(g)
            }
            None => None,
        };

        self.t = t;
        self.radius_history.push(radius);
        self.gamma_tilde = gamma;
        let lambda = gamma.map(|g| radius / g);
        self.lambda_history.push(lambda);

        let eligible = t >= m.max(self.config.min_steps);
        let decision = match lambda {
            Some(l) if eligible && l <= self.config.threshold => {
                self.stopped = true;
                Decision::Stop
            }
            _ => Decision::Continue,
        };
        Ok(Step {
            decision,
            radius,
            lambda,
        })
    }

    /// `r_t / gamma_tilde` for every recorded step, including the warm-up
    /// steps that precede the normalizer. `None` before the normalizer exists.
    pub fn error_ratios(&self) -> Option<Vec<f64>> {
        let g = self.gamma_tilde?;
        Some(self.radius_history.iter().map(|r| r / g).collect())
    }
}

/// Replays a radius sequence through a fresh controller and returns the
/// 1-based step at which it stops, or `None` if it never does.
pub fn replay_stop_step(radii: &[f64], config: StoppingConfig) -> Result<Option<usize>> {
    let mut state = StoppingState::new(config)?;
    for &r in radii {
        if state.push_radius(r)?.decision == Decision::Stop {
            return Ok(Some(state.t()));
        }
    }
    Ok(None)
}

/// Confidence parameters of the supermartingale reading of the criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleParams {
    eta: f64,
    delta: f64,
}

impl MartingaleParams {
    pub fn new(eta: f64, delta: f64) -> Result<Self> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(eta) || !open_unit(delta) {
            return Err(Error::InvalidParameter(format!(
                "eta and delta must lie in (0, 1), got eta = {eta}, delta = {delta}"
            )));
        }
        Ok(Self { eta, delta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Threshold `sqrt(-2 / ln(delta/2)) * eta`: stopping at this error ratio
/// bounds the martingale increment by `(b-a) gamma eta` with probability at
/// least `1 - delta`.
pub fn martingale_threshold(params: MartingaleParams) -> f64 {
    (-2.0 / (params.delta / 2.0).ln()).sqrt() * params.eta
}
