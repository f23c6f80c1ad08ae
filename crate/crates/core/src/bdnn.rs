//! Upper bound on the KL divergence between two dropout-network posteriors.
//!
//! Each layer `l` has input width `H_{l-1}` and output width `H_l`. Column
//! `h` of the mean matrix is the weight vector `m_lh` fed by input unit `h`;
//! its posterior is the two-component mixture
//! `p_l N(m_lh, s_l^2 I) + (1 - p_l) N(0, s_l^2 I)` and the bias is
//! `N(nu_l, s_l^2 I)`. The mixture KL is bounded by the KL between the joint
//! distributions over weights and the mixture indicator, with the indicator
//! of one posterior matched to the same indicator of the other.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutLayerParams {
    /// `H_l x H_{l-1}`; column `h` is `m_lh`.
    means: DMatrix<f64>,
    bias_mean: DVector<f64>,
    variance: f64,
    keep_prob: f64,
}

impl DropoutLayerParams {
    /// `keep_prob` may sit on `{0, 1}`; the bound then reports `+inf` when
    /// the other posterior's keep probability differs.
    pub fn new(
        means: DMatrix<f64>,
        bias_mean: DVector<f64>,
        variance: f64,
        keep_prob: f64,
    ) -> Result<Self> {
        if means.nrows() != bias_mean.len() {
            return Err(Error::DimensionMismatch {
                expected: means.nrows(),
                found: bias_mean.len(),
            });
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "layer variance must be positive, got {variance}"
            )));
        }
        if !(0.0..=1.0).contains(&keep_prob) {
            return Err(Error::InvalidParameter(format!(
                "keep probability must lie in [0, 1], got {keep_prob}"
            )));
        }
        if means.iter().chain(bias_mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameter"));
        }
        Ok(Self {
            means,
            bias_mean,
            variance,
            keep_prob,
        })
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn bias_mean(&self) -> &DVector<f64> {
        &self.bias_mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    /// `H_{l-1}`
    pub fn in_width(&self) -> usize {
        self.means.ncols()
    }

    /// `H_l`
    pub fn out_width(&self) -> usize {
        self.means.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdnnPosterior {
    layers: Vec<DropoutLayerParams>,
}

impl BdnnPosterior {
    pub fn new(layers: Vec<DropoutLayerParams>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_width(),
                    found: pair[1].in_width(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DropoutLayerParams] {
        &self.layers
    }

    fn check_same_architecture(&self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len(),
                found: other.layers.len(),
            });
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.means.shape() != b.means.shape() {
                return Err(Error::InvalidParameter(format!(
                    "layer shapes differ: {:?} vs {:?}",
                    a.means.shape(),
                    b.means.shape()
                )));
            }
        }
        Ok(())
    }
}

/// `p ln(p/q) + (1-p) ln((1-p)/(1-q))` with `0 ln 0 = 0`; `+inf` when `p`
/// puts mass where `q` has none.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// KL bound between dropout posteriors `p` and `q` of the same architecture:
///
/// ```text
/// sum_l  p_l |M_l - M'_l|_F^2 / (2 s'^2) + |nu_l - nu'_l|^2 / (2 s'^2)
///      + H_{l-1} KL_Bern(p_l || q_l)
///      + (H_{l-1} + 1) H_l / 2 * (s^2/s'^2 - ln(s^2/s'^2) - 1)
/// ```
///
/// This is the exact sum of the per-column joint-distribution KLs plus the
/// bias KLs, so it upper-bounds the true mixture KL.
pub fn bdnn_kl_bound(p: &BdnnPosterior, q: &BdnnPosterior) -> Result<f64> {
    p.check_same_architecture(q)?;
    let mut total = 0.0;
    for (a, b) in p.layers.iter().zip(&q.layers) {
        let inputs = a.in_width() as f64;
        let outputs = a.out_width() as f64;
        let ratio = a.variance / b.variance;
        let variance_gap = ratio - ratio.ln() - 1.0;
        let weight_sq = (&a.means - &b.means).norm_squared();
        let bias_sq = (&a.bias_mean - &b.bias_mean).norm_squared();
        let bern = bernoulli_kl(a.keep_prob, b.keep_prob);
        let bern_term = if inputs == 0.0 { 0.0 } else { inputs * bern };
        total += a.keep_prob * weight_sq / (2.0 * b.variance)
            + bias_sq / (2.0 * b.variance)
            + bern_term
            + (inputs + 1.0) * outputs / 2.0 * variance_gap;
    }
    Ok(total.max(0.0))
}

/// The bound when both posteriors share every layer's variance and keep
/// probability: `sum_l (p_l |M_l - M'_l|_F^2 + |nu_l - nu'_l|^2) / (2 s_l^2)`.
pub fn bdnn_kl_bound_simplified(p: &BdnnPosterior, q: &BdnnPosterior) -> Result<f64> {
    p.check_same_architecture(q)?;
    let mut total = 0.0;
    for (l, (a, b)) in p.layers.iter().zip(&q.layers).enumerate() {
        if a.variance != b.variance || a.keep_prob != b.keep_prob {
            return Err(Error::InvalidParameter(format!(
                "layer {l}: simplified bound needs equal variances and keep probabilities"
            )));
        }
        total += (a.keep_prob * (&a.means - &b.means).norm_squared()
            + (&a.bias_mean - &b.bias_mean).norm_squared())
            / (2.0 * a.variance);
    }
    Ok(total)
}

/// Reads layer parameters from a CSV with rows `layer,param,row,col,value`.
/// `param` is one of `weight` (`row < H_l`, `col < H_{l-1}`), `bias`
/// (`row < H_l`), `variance` or `keep_prob`; layers are numbered from 0. A
/// leading header row is skipped.
pub fn read_bdnn_csv<P: AsRef<Path>>(path: P) -> Result<BdnnPosterior> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_bdnn_csv(std::fs::File::open(path)?)
}

#[derive(Default)]
struct LayerEntries {
    weights: Vec<(usize, usize, f64)>,
    bias: Vec<(usize, f64)>,
    variance: Option<f64>,
    keep_prob: Option<f64>,
}

pub fn parse_bdnn_csv<R: Read>(reader: R) -> Result<BdnnPosterior> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut layers: Vec<LayerEntries> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 5 {
            return Err(Error::Parse(format!(
                "line {}: expected 5 fields, found {}",
                line + 1,
                record.len()
            )));
        }
        let Ok(layer) = record[0].parse::<usize>() else {
            if line == 0 {
                continue;
            }
            return Err(Error::Parse(format!("line {}: bad layer index", line + 1)));
        };
        let index = |i: usize| {
            record[i]
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {}: bad index {:?}", line + 1, &record[i])))
        };
        let value: f64 = record[4]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad value {:?}", line + 1, &record[4])))?;
        if layers.len() <= layer {
            layers.resize_with(layer + 1, LayerEntries::default);
        }
        let entry = &mut layers[layer];
        match &record[1] {
            "weight" => entry.weights.push((index(2)?, index(3)?, value)),
            "bias" => entry.bias.push((index(2)?, value)),
            "variance" => entry.variance = Some(value),
            "keep_prob" => entry.keep_prob = Some(value),
            other => {
                return Err(Error::Parse(format!(
                    "line {}: unknown parameter {other:?}",
                    line + 1
                )))
            }
        }
    }
    let mut params = Vec::with_capacity(layers.len());
    for (l, entry) in layers.into_iter().enumerate() {
        let missing = |what: &str| Error::Parse(format!("layer {l}: missing {what}"));
        let outputs = entry
            .weights
            .iter()
            .map(|w| w.0 + 1)
            .chain(entry.bias.iter().map(|b| b.0 + 1))
            .max()
            .ok_or_else(|| missing("weights"))?;
        let inputs = entry.weights.iter().map(|w| w.1 + 1).max().unwrap_or(0);
        if entry.weights.len() != outputs * inputs || entry.bias.len() != outputs {
            return Err(Error::Parse(format!(
                "layer {l}: expected {outputs}x{inputs} weights and {outputs} biases"
            )));
        }
        let mut means = DMatrix::zeros(outputs, inputs);
        for (r, c, v) in entry.weights {
            means[(r, c)] = v;
        }
        let mut bias = DVector::zeros(outputs);
        for (r, v) in entry.bias {
            bias[r] = v;
        }
        params.push(DropoutLayerParams::new(
            means,
            bias,
            entry.variance.ok_or_else(|| missing("variance"))?,
            entry.keep_prob.ok_or_else(|| missing("keep_prob"))?,
        )?);
    }
    BdnnPosterior::new(params)
}
