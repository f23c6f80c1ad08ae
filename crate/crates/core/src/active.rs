//! Pool-based active learning with the stability controller attached.
//!
//! Each step acquires one pool row, refits the posterior, measures both KL
//! divergences to the previous posterior and feeds them to one controller per
//! threshold. All thresholds watch the same trace; none of them changes what
//! gets acquired.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bayes_linear::{
    blr_map_from, blr_predict, brr_acquisition, brr_update_hyper, entropy_acquisition,
    gaussian_kl, laplace_at, BrrHyper, GaussianPosterior, RbfBasis, RidgeMoments,
};
use crate::dataset::{Dataset, LabeledPool, Task};
use crate::error::{Error, Result};
use crate::gp::{
    default_hyper_grid, gp_fit_hyper, gp_variances, kl_backward_closed_form,
    kl_forward_closed_form, GpState, PosteriorCache,
};
use crate::linalg::argmax_first;
use crate::stability::{error_bound_width, KlPair, StoppingConfig, StoppingState};

/// Basis centers per input dimension for the linear learners.
pub const CENTERS_PER_DIM: usize = 10;
/// Prior precision of the logistic learner.
pub const BLR_PRIOR_PRECISION: f64 = 1.0;
const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerProfile {
    Brr,
    Blr,
    Gpr,
}

impl LearnerProfile {
    pub fn task(self) -> Task {
        match self {
            LearnerProfile::Brr | LearnerProfile::Gpr => Task::Regression,
            LearnerProfile::Blr => Task::Classification,
        }
    }

    /// Error-ratio thresholds used when none are given, largest first.
    pub fn default_thresholds(self) -> Vec<f64> {
        match self {
            LearnerProfile::Brr => vec![0.02, 0.015, 0.01],
            LearnerProfile::Blr => vec![0.3, 0.2, 0.1],
            LearnerProfile::Gpr => vec![0.05, 0.04, 0.03],
        }
    }
}

impl FromStr for LearnerProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brr" => Ok(LearnerProfile::Brr),
            "blr" => Ok(LearnerProfile::Blr),
            "gpr" => Ok(LearnerProfile::Gpr),
            _ => Err(Error::Config(format!(
                "unknown model {s:?} (expected brr, blr or gpr)"
            ))),
        }
    }
}

impl std::fmt::Display for LearnerProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LearnerProfile::Brr => "brr",
            LearnerProfile::Blr => "blr",
            LearnerProfile::Gpr => "gpr",
        })
    }
}

/// A Bayesian model that can be grown one labeled row at a time.
pub trait Learner {
    /// Row with the highest acquisition score among `pool` (ascending row
    /// ids); ties go to the lowest row id.
    fn select(&self, data: &Dataset, pool: &[usize]) -> Result<usize>;

    /// Adds `row` to the training set and returns the KL pair between the
    /// new and the previous posterior.
    fn observe(&mut self, data: &Dataset, row: usize) -> Result<KlPair>;

    /// Expected loss of the current posterior on `test`.
    fn test_error(&self, data: &Dataset, test: &[usize]) -> Result<f64>;
}

/// Fits the profile's hyperparameters on the initial labeled set, freezes
/// them and returns the learner conditioned on that set.
pub fn build_learner(
    profile: LearnerProfile,
    data: &Dataset,
    pool: &LabeledPool,
) -> Result<Box<dyn Learner>> {
    if profile.task() != data.task {
        return Err(Error::Config(format!(
            "model {profile} needs a {} task, dataset is {}",
            profile.task(),
            data.task
        )));
    }
    let initial = pool.initial_set();
    let non_test: Vec<usize> = pool
        .labeled
        .iter()
        .chain(pool.pool.iter())
        .copied()
        .collect();
    Ok(match profile {
        LearnerProfile::Brr => Box::new(RidgeLearner::new(data, initial, &non_test)?),
        LearnerProfile::Blr => Box::new(LogisticLearner::new(data, initial, &non_test)?),
        LearnerProfile::Gpr => Box::new(GpLearner::new(data, pool)?),
    })
}

fn basis_for(data: &Dataset, rows: &[usize]) -> Result<RbfBasis> {
    RbfBasis::from_inputs(data.dims(), CENTERS_PER_DIM, &data.rows(rows))
}

fn kl_pair(before: &GaussianPosterior, after: &GaussianPosterior) -> Result<KlPair> {
    KlPair::new(gaussian_kl(after, before)?, gaussian_kl(before, after)?)
}

fn require_test(test: &[usize]) -> Result<()> {
    if test.is_empty() {
        return Err(Error::InsufficientData("test set is empty".into()));
    }
    Ok(())
}

/// `mean_i (y_i - mu_i)^2 + s_i`
fn squared_loss<I: Iterator<Item = (f64, f64, f64)>>(items: I) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (y, mu, var) in items {
        total += (y - mu) * (y - mu) + var;
        count += 1;
    }
    total / count as f64
}

fn cross_entropy(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

struct RidgeLearner {
    basis: RbfBasis,
    hyper: BrrHyper,
    moments: RidgeMoments,
    posterior: GaussianPosterior,
}

impl RidgeLearner {
    fn new(data: &Dataset, initial: &[usize], non_test: &[usize]) -> Result<Self> {
        let basis = basis_for(data, non_test)?;
        let inputs = data.rows(initial);
        let targets = data.targets_at(initial);
        let hyper = brr_update_hyper(&basis, BrrHyper::default(), &inputs, &targets)?.hyper;
        let moments = RidgeMoments::from_data(&basis, &inputs, &targets)?;
        let posterior = moments.posterior(hyper)?;
        Ok(Self {
            basis,
            hyper,
            moments,
            posterior,
        })
    }
}

impl Learner for RidgeLearner {
    fn select(&self, data: &Dataset, pool: &[usize]) -> Result<usize> {
        let idx = brr_acquisition(&self.posterior, &self.basis, &data.rows(pool))?;
        Ok(pool[idx])
    }

    fn observe(&mut self, data: &Dataset, row: usize) -> Result<KlPair> {
        self.moments
            .push(&self.basis.features(data.row(row))?, data.targets[row])?;
        let next = self.moments.posterior(self.hyper)?;
        let pair = kl_pair(&self.posterior, &next)?;
        self.posterior = next;
        Ok(pair)
    }

    fn test_error(&self, data: &Dataset, test: &[usize]) -> Result<f64> {
        require_test(test)?;
        let mut items = Vec::with_capacity(test.len());
        for &i in test {
            let psi = self.basis.features(data.row(i))?;
            items.push((
                data.targets[i],
                self.posterior.mean().dot(&psi),
                self.posterior.covariance_quad(&psi),
            ));
        }
        Ok(squared_loss(items.into_iter()))
    }
}

struct LogisticLearner {
    basis: RbfBasis,
    labeled: Vec<usize>,
    posterior: GaussianPosterior,
}

impl LogisticLearner {
    fn new(data: &Dataset, initial: &[usize], non_test: &[usize]) -> Result<Self> {
        let basis = basis_for(data, non_test)?;
        let mut learner = Self {
            posterior: GaussianPosterior::from_precision(
                DVector::zeros(basis.len()),
                nalgebra::DMatrix::identity(basis.len(), basis.len()) * BLR_PRIOR_PRECISION,
            )?,
            basis,
            labeled: initial.to_vec(),
        };
        learner.posterior = learner.refit(data, None)?;
        Ok(learner)
    }

    fn refit(&self, data: &Dataset, init: Option<&DVector<f64>>) -> Result<GaussianPosterior> {
        let inputs = data.rows(&self.labeled);
        let labels = data.targets_at(&self.labeled);
        let w = blr_map_from(&self.basis, BLR_PRIOR_PRECISION, &inputs, &labels, init)?;
        laplace_at(&self.basis, BLR_PRIOR_PRECISION, &inputs, &labels, w)
    }
}

impl Learner for LogisticLearner {
    fn select(&self, data: &Dataset, pool: &[usize]) -> Result<usize> {
        let idx = entropy_acquisition(&self.posterior, &self.basis, &data.rows(pool))?;
        Ok(pool[idx])
    }

    fn observe(&mut self, data: &Dataset, row: usize) -> Result<KlPair> {
        self.labeled.push(row);
        let next = self.refit(data, Some(&self.posterior.mean().clone()))?;
        let pair = kl_pair(&self.posterior, &next)?;
        self.posterior = next;
        Ok(pair)
    }

    fn test_error(&self, data: &Dataset, test: &[usize]) -> Result<f64> {
        require_test(test)?;
        let mut total = 0.0;
        for &i in test {
            let p = blr_predict(&self.posterior, &self.basis, data.row(i))?;
            total += cross_entropy(data.targets[i], p);
        }
        Ok(total / test.len() as f64)
    }
}

struct GpLearner {
    state: GpState,
    /// Rows tracked by `pool_cache`, ascending.
    pool_rows: Vec<usize>,
    pool_cache: PosteriorCache,
    test_rows: Vec<usize>,
    test_cache: PosteriorCache,
}

impl GpLearner {
    fn new(data: &Dataset, pool: &LabeledPool) -> Result<Self> {
        let initial = pool.initial_set();
        let inputs = data.rows(initial);
        let targets = data.targets_at(initial);
        let hyper = gp_fit_hyper(&inputs, &targets, &default_hyper_grid(data.dims()))?;
        log::info!(
            "gp hyperparameters: lengthscale = {}, noise precision = {}",
            hyper.lengthscale,
            hyper.noise_precision
        );
        let state = GpState::from_data(hyper, data.dims(), &inputs, &targets)?;
        let pool_rows: Vec<usize> = pool.pool.iter().copied().collect();
        let owned = |rows: &[usize]| rows.iter().map(|&i| data.row(i).to_vec()).collect();
        let pool_cache = PosteriorCache::new(&state, owned(&pool_rows))?;
        let test_cache = PosteriorCache::new(&state, owned(&pool.test))?;
        Ok(Self {
            state,
            pool_rows,
            pool_cache,
            test_rows: pool.test.clone(),
            test_cache,
        })
    }
}

impl Learner for GpLearner {
    fn select(&self, data: &Dataset, pool: &[usize]) -> Result<usize> {
        let idx = if pool == self.pool_rows.as_slice() {
            argmax_first(self.pool_cache.variances().iter().copied())
        } else {
            argmax_first(gp_variances(&self.state, &data.rows(pool))?)
        };
        idx.map(|i| pool[i]).ok_or(Error::EmptyCandidates)
    }

    fn observe(&mut self, data: &Dataset, row: usize) -> Result<KlPair> {
        let x = data.row(row);
        let y = data.targets[row];
        let tracked = self.pool_rows.binary_search(&row).ok();
        let (mu, var) = match tracked {
            Some(i) => (self.pool_cache.means()[i], self.pool_cache.variances()[i]),
            None => self.state.posterior(x)?,
        };
        let beta = self.state.hyper().noise_precision;
        let pair = KlPair::new(
            kl_forward_closed_form(var, y - mu, beta)?,
            kl_backward_closed_form(var, y - mu, beta)?,
        )?;
        self.state = self.state.extend(x, y)?;
        if let Some(i) = tracked {
            self.pool_rows.remove(i);
            self.pool_cache.remove(i);
        }
        self.pool_cache.update(&self.state);
        self.test_cache.update(&self.state);
        Ok(pair)
    }

    fn test_error(&self, data: &Dataset, test: &[usize]) -> Result<f64> {
        require_test(test)?;
        if test == self.test_rows.as_slice() {
            return Ok(squared_loss(test.iter().enumerate().map(|(k, &i)| {
                (
                    data.targets[i],
                    self.test_cache.means()[k],
                    self.test_cache.variances()[k],
                )
            })));
        }
        let mut items = Vec::with_capacity(test.len());
        for &i in test {
            let (mu, var) = self.state.posterior(data.row(i))?;
            items.push((data.targets[i], mu, var));
        }
        Ok(squared_loss(items.into_iter()))
    }
}

/// Expected loss of `learner` on `test`: squared loss plus predictive
/// variance for regression, clipped cross-entropy for classification.
pub fn test_error(learner: &dyn Learner, data: &Dataset, test: &[usize]) -> Result<f64> {
    learner.test_error(data, test)
}

/// One acquisition step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// 1-based step index.
    pub t: usize,
    pub acquired_index: usize,
    /// `KL[q_t || q_{t-1}]`
    pub kl_forward: f64,
    /// `KL[q_{t-1} || q_t]`
    pub kl_backward: f64,
    pub r_t: f64,
    /// Unset until the warm-up has produced a normalizer.
    pub lambda_t: Option<f64>,
    pub test_error: f64,
    /// Per threshold, whether its controller has stopped by this step.
    pub stopped_flags: Vec<(f64, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveLearningConfig {
    pub thresholds: Vec<f64>,
    pub warmup: usize,
    pub min_steps: usize,
    pub budget: usize,
    /// Keep acquiring after every threshold has stopped, until the budget
    /// or the pool runs out.
    pub run_to_budget: bool,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.05],
            warmup: 10,
            min_steps: 10,
            budget: 500,
            run_to_budget: false,
        }
    }
}

enum Acquisition {
    Model,
    Random(Box<ChaCha8Rng>),
}

/// Runs the acquisition loop until every threshold has stopped, the budget
/// is spent or the pool is empty. `pool` is updated in place.
pub fn run_active_learning(
    data: &Dataset,
    pool: &mut LabeledPool,
    profile: LearnerProfile,
    config: &ActiveLearningConfig,
) -> Result<Vec<TraceRecord>> {
    drive(data, pool, profile, config, Acquisition::Model)
}

/// As [`run_active_learning`], but each step draws a pool row uniformly at
/// random from a generator seeded with `seed`.
pub fn run_random_baseline(
    data: &Dataset,
    pool: &mut LabeledPool,
    profile: LearnerProfile,
    config: &ActiveLearningConfig,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    let rng = ChaCha8Rng::seed_from_u64(seed);
    drive(data, pool, profile, config, Acquisition::Random(Box::new(rng)))
}

fn drive(
    data: &Dataset,
    pool: &mut LabeledPool,
    profile: LearnerProfile,
    config: &ActiveLearningConfig,
    mut acquisition: Acquisition,
) -> Result<Vec<TraceRecord>> {
    // Validates warm-up and minimum steps even when no threshold is given.
    StoppingConfig::new(1.0, config.warmup, config.min_steps)?;
    let mut controllers = config
        .thresholds
        .iter()
        .map(|&th| StoppingState::new(StoppingConfig::new(th, config.warmup, config.min_steps)?))
        .collect::<Result<Vec<_>>>()?;
    let mut learner = build_learner(profile, data, pool)?;

    let mut trace = Vec::new();
    let mut radii: Vec<f64> = Vec::new();
    let mut normalizer: Option<f64> = None;

    for t in 1..=config.budget {
        if pool.pool.is_empty() {
            log::info!("pool exhausted after {} steps", t - 1);
            break;
        }
        let candidates: Vec<usize> = pool.pool.iter().copied().collect();
        let row = match &mut acquisition {
            Acquisition::Model => learner.select(data, &candidates)?,
            Acquisition::Random(rng) => candidates[rng.random_range(0..candidates.len())],
        };
        pool.acquire(row)?;
        let pair = learner.observe(data, row)?;
        let r_t = error_bound_width(pair);

        radii.push(r_t);
        if t == config.warmup {
            let g = radii.iter().copied().fold(f64::INFINITY, f64::min);
            if g <= 0.0 {
                return Err(Error::DegenerateNormalizer {
                    warmup: config.warmup,
                });
            }
            normalizer = Some(g);
        }
        for c in controllers.iter_mut().filter(|c| !c.is_stopped()) {
            c.push_radius(r_t)?;
        }

        trace.push(TraceRecord {
            t,
            acquired_index: row,
            kl_forward: pair.forward(),
            kl_backward: pair.backward(),
            r_t,
            lambda_t: normalizer.map(|g| r_t / g),
            test_error: learner.test_error(data, &pool.test)?,
            stopped_flags: config
                .thresholds
                .iter()
                .zip(&controllers)
                .map(|(&th, c)| (th, c.is_stopped()))
                .collect(),
        });

        let all_stopped = !controllers.is_empty() && controllers.iter().all(|c| c.is_stopped());
        if all_stopped && !config.run_to_budget {
            break;
        }
    }
    Ok(trace)
}

pub const TRACE_HEADER: &str = "t,acquired_index,kl_forward,kl_backward,r_t,lambda_t,test_error";

/// Formats a real with 17 significant digits.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let lambda = r.lambda_t.map(fmt_real).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t,
            r.acquired_index,
            fmt_real(r.kl_forward),
            fmt_real(r.kl_backward),
            fmt_real(r.r_t),
            lambda,
            fmt_real(r.test_error)
        ));
    }
    out
}

/// Writes the trace CSV atomically.
pub fn write_trace<P: AsRef<Path>>(path: P, trace: &[TraceRecord]) -> Result<()> {
    crate::atomic::write_atomic(path.as_ref(), trace_to_csv(trace).as_bytes())
}

pub fn read_trace<P: AsRef<Path>>(path: P) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_trace(std::fs::File::open(path)?)
}

/// Parses a trace CSV. Stop flags are not part of the file and come back
/// empty.
pub fn parse_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Parse(format!(
            "unexpected trace header {:?}",
            header.join(",")
        )));
    }
    let mut trace = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Parse(format!("trace row {}: bad {what}", line + 2));
        let int = |i: usize, what: &str| record[i].parse::<usize>().map_err(|_| bad(what));
        let real = |i: usize, what: &str| record[i].parse::<f64>().map_err(|_| bad(what));
        trace.push(TraceRecord {
            t: int(0, "t")?,
            acquired_index: int(1, "acquired_index")?,
            kl_forward: real(2, "kl_forward")?,
            kl_backward: real(3, "kl_backward")?,
            r_t: real(4, "r_t")?,
            lambda_t: if record[5].is_empty() {
                None
            } else {
                Some(real(5, "lambda_t")?)
            },
            test_error: real(6, "test_error")?,
            stopped_flags: Vec::new(),
        });
    }
    Ok(trace)
}
