//! Principal branch of the Lambert W function on the real line.
//!
//! `W0(x)` is the unique `w >= -1` with `w * exp(w) = x`, defined for
//! `x >= -1/e`. The initial guess is piecewise (branch-point series,
//! a log-based guess in the middle, asymptotic expansion for large `x`)
//! and is polished by Halley's iteration.

use std::f64::consts::E;

use crate::error::{Error, Result};

/// Inputs in `[-1/e - BRANCH_CLAMP, -1/e]` are treated as the branch point.
pub const BRANCH_CLAMP: f64 = 1e-12;

const BRANCH_POINT: f64 = -1.0 / E;
const MAX_HALLEY_STEPS: usize = 64;

/// Evaluates `W0(x)`.
///
/// Returns [`Error::Domain`] below the branch point (beyond the clamp band)
/// and [`Error::NonFinite`] for NaN or infinite input.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("Lambert W argument"));
    }
    if x < BRANCH_POINT - BRANCH_CLAMP {
        return Err(Error::Domain {
            function: "lambert_w0",
            value: x,
        });
    }
    if x <= BRANCH_POINT {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }

    let mut w = initial_guess(x);
    for _ in 0..MAX_HALLEY_STEPS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 <= 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w.max(-1.0))
}

/// Offsets below this are solved without forming `(c - 1) / e`, whose
/// rounding would cost half the digits of `W0 + 1` near the branch point.
const OFFSET_SERIES_LIMIT: f64 = 1e-2;

/// `W0((c - 1) / e) + 1` for `c >= 0`, accurate to full relative precision
/// even when `c` is tiny. `c` is the distance `1 + e x` to the branch point.
pub(crate) fn w0p1_from_offset(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    if c >= OFFSET_SERIES_LIMIT {
        return lambert_w0((c - 1.0) / E).map_or(0.0, |w| w + 1.0);
    }
    // z = W0 + 1 solves z e^z - (e^z - 1) = c.
    let p = (2.0 * c).sqrt();
    let mut z = p - p * p / 3.0 + 11.0 / 72.0 * p * p * p - 43.0 / 540.0 * p.powi(4);
    for _ in 0..8 {
        let step = (offset_series(z) - c) / (z * z.exp());
        z -= step;
        if step.abs() <= 2.0 * f64::EPSILON * z {
            break;
        }
    }
    z
}

/// `z e^z - expm1(z) = sum_{k>=2} (k-1) z^k / k!` for small `z`.
fn offset_series(z: f64) -> f64 {
    let mut term = z * z / 2.0;
    let mut sum = term;
    for k in 3..30 {
        term *= z / k as f64;
        let add = term * (k - 1) as f64;
        sum += add;
        if add <= f64::EPSILON * sum {
            break;
        }
    }
    sum
}

fn initial_guess(x: f64) -> f64 {
    if x < -0.32 {
        // Series in p = sqrt(2(ex + 1)) about the branch point.
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        let l = x.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}
