//! End-to-end experiment: load, normalize, split, run, and write artifacts.

use std::path::{Path, PathBuf};

use crate::active::{run_active_learning, write_trace, ActiveLearningConfig, LearnerProfile, TraceRecord};
use crate::dataset::{load_csv, normalize, split, Task};
use crate::error::{Error, Result};
use crate::eval::{stop_summary, stop_summary_to_csv, CorrelationReport, StopSummary};

pub const TRACE_FILE: &str = "trace.csv";
pub const STOP_SUMMARY_FILE: &str = "stop_summary.csv";
pub const CORRELATION_FILE: &str = "correlation.txt";

/// Test split cap when no explicit size is configured.
pub const DEFAULT_TEST_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_path: PathBuf,
    pub task: Task,
    pub profile: LearnerProfile,
    /// Sorted largest first by [`ExperimentConfig::validate`].
    pub thresholds: Vec<f64>,
    pub warmup: usize,
    pub min_steps: usize,
    pub n0: usize,
    /// `None` means a quarter of the rows, at most [`DEFAULT_TEST_CAP`].
    pub test_size: Option<usize>,
    pub budget: usize,
    pub seed: u64,
    pub run_to_budget: bool,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Config with the profile's default thresholds and the standard sizes.
    pub fn new(dataset_path: PathBuf, task: Task, profile: LearnerProfile, output_dir: PathBuf) -> Self {
        Self {
            dataset_path,
            task,
            profile,
            thresholds: profile.default_thresholds(),
            warmup: 10,
            min_steps: 10,
            n0: 10,
            test_size: None,
            budget: 500,
            seed: 0,
            run_to_budget: false,
            output_dir,
        }
    }

    /// Checks everything that does not need the dataset and sorts the
    /// thresholds largest first.
    pub fn validate(&mut self) -> Result<()> {
        validate_thresholds(&mut self.thresholds)?;
        if self.profile.task() != self.task {
            return Err(Error::Config(format!(
                "model {} needs a {} task, got {}",
                self.profile,
                self.profile.task(),
                self.task
            )));
        }
        if self.warmup == 0 || self.min_steps == 0 {
            return Err(Error::Config("m and min-steps must be positive".into()));
        }
        if self.n0 == 0 {
            return Err(Error::Config("n0 must be positive".into()));
        }
        Ok(())
    }

    fn resolved_test_size(&self, rows: usize) -> usize {
        self.test_size
            .unwrap_or_else(|| (rows / 4).min(DEFAULT_TEST_CAP))
    }
}

/// Rejects thresholds outside `(0, 1]` and sorts the rest largest first.
pub fn validate_thresholds(thresholds: &mut [f64]) -> Result<()> {
    if let Some(bad) = thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Config(format!("threshold {bad} is outside (0, 1]")));
    }
    thresholds.sort_by(|a, b| b.total_cmp(a));
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trace: Vec<TraceRecord>,
    pub summary: Vec<StopSummary>,
    pub correlation: CorrelationReport,
    pub dropped_rows: usize,
}

/// Runs one experiment and writes the trace, stop summary and correlation
/// report into the output directory. Files written before a failure are
/// removed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut config = config.clone();
    config.validate()?;
    let loaded = load_csv(&config.dataset_path, config.task)?;
    let (data, _) = normalize(&loaded.dataset)?;
    let test_size = config.resolved_test_size(data.len());
    let mut pool = split(&data, config.n0, test_size, config.seed)?;
    let al = ActiveLearningConfig {
        thresholds: config.thresholds.clone(),
        warmup: config.warmup,
        min_steps: config.min_steps,
        budget: config.budget,
        run_to_budget: config.run_to_budget,
    };
    let trace = run_active_learning(&data, &mut pool, config.profile, &al)?;
    let summary = stop_summary(&trace, &config.thresholds, config.warmup, config.min_steps)?;
    let correlation = CorrelationReport::from_trace(&trace)?;

    write_outputs(&config.output_dir, &trace, &summary, &correlation)?;
    Ok(ExperimentOutcome {
        trace,
        summary,
        correlation,
        dropped_rows: loaded.dropped_rows,
    })
}

fn write_outputs(
    dir: &Path,
    trace: &[TraceRecord],
    summary: &[StopSummary],
    correlation: &CorrelationReport,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let path = dir.join(TRACE_FILE);
        write_trace(&path, trace)?;
        written.push(path);
        let path = dir.join(STOP_SUMMARY_FILE);
        crate::atomic::write_atomic(&path, stop_summary_to_csv(summary).as_bytes())?;
        written.push(path);
        let path = dir.join(CORRELATION_FILE);
        crate::atomic::write_atomic(&path, correlation.render().as_bytes())?;
        written.push(path);
        Ok(())
    })();
    if result.is_err() {
        for path in &written {
            let _ = std::fs::remove_file(path);
        }
    }
    result
}
