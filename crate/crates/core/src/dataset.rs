//! Dataset ingestion, feature standardization and pool splitting.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Regression,
    Classification,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            _ => Err(Error::Config(format!(
                "unknown task {s:?} (expected regression or classification)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row per sample.
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub feature_names: Option<Vec<String>>,
    pub task: Task,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>, task: Task) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                found: targets.len(),
            });
        }
        let dims = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != dims) {
            return Err(Error::Parse("rows have differing feature counts".into()));
        }
        if features.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entry"));
        }
        if task == Task::Classification && targets.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Parse("classification targets must be 0 or 1".into()));
        }
        Ok(Self {
            features,
            targets,
            feature_names: None,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn rows<'a>(&'a self, indices: &[usize]) -> Vec<&'a [f64]> {
        indices.iter().map(|&i| self.features[i].as_slice()).collect()
    }

    pub fn targets_at(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.targets[i]).collect()
    }
}

/// A parsed dataset plus the number of rows skipped as malformed.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Loads a CSV whose last column is the target. A first row that does not
/// parse as numbers is taken as a header; later malformed rows are dropped.
pub fn load_csv<P: AsRef<Path>>(path: P, task: Task) -> Result<LoadedDataset> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_csv(std::fs::File::open(path)?, task)
}

pub fn parse_csv<R: Read>(reader: R, task: Task) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    let mut seen_any = false;

    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let first = !seen_any;
        seen_any = true;
        let parsed: Option<Vec<f64>> = record
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(values) if width.is_none_or(|w| w == values.len()) => {
                width = Some(values.len());
                rows.push(values);
            }
            None if first => {
                width = Some(record.len());
                header = Some(record.iter().map(str::to_owned).collect());
            }
            _ => dropped += 1,
        }
    }

    if !seen_any {
        return Err(Error::Parse("file is empty".into()));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no usable rows".into()));
    }
    let width = width.unwrap_or(0);
    if width < 2 {
        return Err(Error::Parse(
            "need at least one feature column and a target column".into(),
        ));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} malformed row(s)");
    }

    let mut features = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    for mut row in rows {
        targets.push(row.pop().expect("row width checked above"));
        features.push(row);
    }
    let mut dataset = Dataset::new(features, targets, task).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(msg),
        other => other,
    })?;
    dataset.feature_names = header.map(|mut h| {
        h.pop();
        h
    });
    Ok(LoadedDataset {
        dataset,
        dropped_rows: dropped,
    })
}

/// Per-feature statistics used by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub mean: f64,
    /// Population standard deviation; 1 for constant columns.
    pub std: f64,
    pub constant: bool,
}

/// Standardizes every feature column to zero mean and unit population
/// standard deviation over all rows. Constant columns are only centered.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, Vec<FeatureStats>)> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "normalization needs at least two rows".into(),
        ));
    }
    let stats: Vec<FeatureStats> = (0..dataset.dims())
        .map(|d| {
            let mean = dataset.features.iter().map(|r| r[d]).sum::<f64>() / n as f64;
            let var = dataset
                .features
                .iter()
                .map(|r| (r[d] - mean) * (r[d] - mean))
                .sum::<f64>()
                / n as f64;
            let std = var.sqrt();
            // Relative test: tiny spread from roundoff on a constant column.
            let constant = std <= 1e-12 * mean.abs().max(1.0);
            FeatureStats {
                mean,
                std: if constant { 1.0 } else { std },
                constant,
            }
        })
        .collect();
    for (d, s) in stats.iter().enumerate() {
        if s.constant {
            log::warn!("feature {d} is constant; centered only");
        }
    }
    let features = dataset
        .features
        .iter()
        .map(|r| {
            r.iter()
                .zip(&stats)
                .map(|(v, s)| if s.constant { 0.0 } else { (v - s.mean) / s.std })
                .collect()
        })
        .collect();
    let out = Dataset {
        features,
        targets: dataset.targets.clone(),
        feature_names: dataset.feature_names.clone(),
        task: dataset.task,
    };
    Ok((out, stats))
}

/// Row bookkeeping for pool-based active learning.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    /// Labeled rows in acquisition order; the first `initial` are the seed set.
    pub labeled: Vec<usize>,
    pub initial: usize,
    /// Unlabeled candidates, iterated in ascending row order.
    pub pool: BTreeSet<usize>,
    /// Held-out rows, ascending.
    pub test: Vec<usize>,
    pub seed: u64,
}

impl LabeledPool {
    /// Moves `row` from the pool to the end of the labeled list.
    pub fn acquire(&mut self, row: usize) -> Result<()> {
        if !self.pool.remove(&row) {
            return Err(Error::InvalidParameter(format!("row {row} is not in the pool")));
        }
        self.labeled.push(row);
        Ok(())
    }

    pub fn initial_set(&self) -> &[usize] {
        &self.labeled[..self.initial]
    }
}

/// Seeded split: shuffle all rows, take the first `test_size` as the test
/// set, the next `n0` as the initial labeled set and the rest as the pool.
pub fn split(dataset: &Dataset, n0: usize, test_size: usize, seed: u64) -> Result<LabeledPool> {
    let n = dataset.len();
    if n0 == 0 {
        return Err(Error::Config("initial labeled set must be nonempty".into()));
    }
    if n0 + test_size > n {
        return Err(Error::Config(format!(
            "initial size {n0} plus test size {test_size} exceeds {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..test_size].to_vec();
    test.sort_unstable();
    let labeled = order[test_size..test_size + n0].to_vec();
    let pool = order[test_size + n0..].iter().copied().collect();
    Ok(LabeledPool {
        labeled,
        initial: n0,
        pool,
        test,
        seed,
    })
}
