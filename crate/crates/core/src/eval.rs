//! Trace analysis: running-minimum filtering, correlation and stop summaries.

use std::fmt::Write as _;

use crate::active::{fmt_real, TraceRecord};
use crate::error::{Error, Result};
use crate::stability::{replay_stop_step, StoppingConfig};

/// Error ratios that set a new strict running minimum, paired with the test
/// error at the same step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSequences {
    pub e_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
}

impl FilteredSequences {
    pub fn len(&self) -> usize {
        self.lambda_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda_hat.is_empty()
    }
}

/// Keeps step `i` iff `lambda_i` is strictly below every earlier kept ratio.
/// Steps whose ratio is unset are skipped.
pub fn filter_running_min(trace: &[TraceRecord]) -> Result<FilteredSequences> {
    let mut out = FilteredSequences {
        e_hat: Vec::new(),
        lambda_hat: Vec::new(),
    };
    for r in trace {
        let Some(l) = r.lambda_t else { continue };
        if out.lambda_hat.last().is_none_or(|&m| l < m) {
            out.lambda_hat.push(l);
            out.e_hat.push(r.test_error);
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("trace has no error ratios".into()));
    }
    Ok(out)
}

/// Sample Pearson correlation between `e_hat` and `lambda_hat`.
pub fn pearson_correlation(seqs: &FilteredSequences) -> Result<f64> {
    pearson(&seqs.e_hat, &seqs.lambda_hat)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(
            "correlation needs at least two points".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Filtered correlation of a trace, or `None` when it is undefined (too few
/// ratios or a constant sequence).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationReport {
    pub pearson: Option<f64>,
    pub n_points: usize,
}

impl CorrelationReport {
    pub fn from_trace(trace: &[TraceRecord]) -> Result<Self> {
        let seqs = match filter_running_min(trace) {
            Ok(s) => s,
            Err(Error::InsufficientData(_)) => {
                return Ok(Self {
                    pearson: None,
                    n_points: 0,
                })
            }
            Err(e) => return Err(e),
        };
        let pearson = match pearson_correlation(&seqs) {
            Ok(p) => Some(p),
            Err(Error::InsufficientData(_) | Error::UndefinedCorrelation) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            pearson,
            n_points: seqs.len(),
        })
    }

    /// Two `key=value` lines.
    pub fn render(&self) -> String {
        let value = self
            .pearson
            .map(fmt_real)
            .unwrap_or_else(|| "insufficient data".into());
        format!("pearson={value}\nn_points={}\n", self.n_points)
    }
}

/// Where one threshold's controller stopped on a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopSummary {
    pub threshold: f64,
    /// 1-based step, `None` if the controller never stopped.
    pub stop_step: Option<usize>,
    pub test_error_at_stop: Option<f64>,
}

/// Replays the trace's radii through one controller per threshold.
pub fn stop_summary(
    trace: &[TraceRecord],
    thresholds: &[f64],
    warmup: usize,
    min_steps: usize,
) -> Result<Vec<StopSummary>> {
    let radii: Vec<f64> = trace.iter().map(|r| r.r_t).collect();
    thresholds
        .iter()
        .map(|&threshold| {
            let config = StoppingConfig::new(threshold, warmup, min_steps)?;
            let stop_step = replay_stop_step(&radii, config)?;
            Ok(StopSummary {
                threshold,
                stop_step,
                test_error_at_stop: stop_step.map(|t| trace[t - 1].test_error),
            })
        })
        .collect()
}

pub const STOP_SUMMARY_HEADER: &str = "threshold,stop_step,test_error_at_stop";

pub fn stop_summary_to_csv(summary: &[StopSummary]) -> String {
    let mut out = String::new();
    out.push_str(STOP_SUMMARY_HEADER);
    out.push('\n');
    for s in summary {
        let step = s.stop_step.map(|t| t.to_string()).unwrap_or_default();
        let err = s.test_error_at_stop.map(fmt_real).unwrap_or_default();
        let _ = writeln!(out, "{},{step},{err}", fmt_real(s.threshold));
    }
    out
}
