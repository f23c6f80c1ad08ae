use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stabstop_core::active::{read_trace, LearnerProfile};
use stabstop_core::bdnn::{bdnn_kl_bound, bdnn_kl_bound_simplified, read_bdnn_csv};
use stabstop_core::dataset::Task;
use stabstop_core::eval::{stop_summary, stop_summary_to_csv, CorrelationReport};
use stabstop_core::experiment::{run_experiment, ExperimentConfig};
use stabstop_core::{error_bound_width, Error, KlPair};

#[derive(Parser)]
#[command(name = "stabstop", version, about = "Stability-based stopping for Bayesian active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one active-learning experiment and write its artifacts.
    Run(RunArgs),
    /// Recompute the filtered correlation from an existing trace.
    Eval(EvalArgs),
    /// Stability radius and error ratio for one KL pair.
    Radius(RadiusArgs),
    /// KL bound between two dropout-network posteriors.
    BdnnKl(BdnnArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => Task::Regression,
            TaskArg::Classification => Task::Classification,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Brr,
    Blr,
    Gpr,
}

impl From<ModelArg> for LearnerProfile {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Brr => LearnerProfile::Brr,
            ModelArg::Blr => LearnerProfile::Blr,
            ModelArg::Gpr => LearnerProfile::Gpr,
        }
    }
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("threshold {v} is outside (0, 1]"))
    }
}

#[derive(Args)]
struct RunArgs {
    /// CSV dataset; the last column is the target.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Comma-separated error-ratio thresholds in (0, 1]. Defaults depend on the model.
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold)]
    thresholds: Option<Vec<f64>>,
    /// Warm-up length for the normalizer.
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    min_steps: usize,
    /// Size of the initial labeled set.
    #[arg(long, default_value_t = 10)]
    n0: usize,
    /// Test rows; defaults to a quarter of the data, at most 2000.
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long, default_value_t = 500)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep acquiring after every threshold has stopped.
    #[arg(long)]
    full: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Trace CSV written by `run`.
    #[arg(long)]
    trace: PathBuf,
    /// Also print the stop step for these thresholds.
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold)]
    thresholds: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    min_steps: usize,
}

#[derive(Args)]
struct RadiusArgs {
    /// KL from the new posterior to the previous one.
    #[arg(long)]
    forward: f64,
    /// KL from the previous posterior to the new one.
    #[arg(long)]
    backward: f64,
    /// Normalizer; when given, the error ratio is printed too.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct BdnnArgs {
    /// Layer parameters of the first posterior.
    #[arg(long)]
    p: PathBuf,
    /// Layer parameters of the second posterior.
    #[arg(long)]
    q: PathBuf,
    /// Use the equal-variance, equal-keep-probability form.
    #[arg(long)]
    simplified: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::MissingFile(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(command: Command) -> stabstop_core::Result<()> {
    match command {
        Command::Run(args) => run(args),
        Command::Eval(args) => eval(args),
        Command::Radius(args) => radius(args),
        Command::BdnnKl(args) => bdnn(args),
    }
}

fn run(args: RunArgs) -> stabstop_core::Result<()> {
    let profile = LearnerProfile::from(args.model);
    let mut config = ExperimentConfig::new(args.data, args.task.into(), profile, args.out);
    if let Some(t) = args.thresholds {
        config.thresholds = t;
    }
    config.warmup = args.m;
    config.min_steps = args.min_steps;
    config.n0 = args.n0;
    config.test_size = args.test_size;
    config.budget = args.budget;
    config.seed = args.seed;
    config.run_to_budget = args.full;

    let outcome = run_experiment(&config)?;
    if outcome.dropped_rows > 0 {
        eprintln!("warning: dropped {} malformed row(s)", outcome.dropped_rows);
    }
    println!("steps={}", outcome.trace.len());
    print!("{}", stop_summary_to_csv(&outcome.summary));
    print!("{}", outcome.correlation.render());
    println!("output={}", config.output_dir.display());
    Ok(())
}

fn eval(args: EvalArgs) -> stabstop_core::Result<()> {
    let trace = read_trace(&args.trace)?;
    print!("{}", CorrelationReport::from_trace(&trace)?.render());
    if let Some(mut thresholds) = args.thresholds {
        thresholds.sort_by(|a, b| b.total_cmp(a));
        let summary = stop_summary(&trace, &thresholds, args.m, args.min_steps)?;
        print!("{}", stop_summary_to_csv(&summary));
    }
    Ok(())
}

fn radius(args: RadiusArgs) -> stabstop_core::Result<()> {
    let pair = KlPair::new(args.forward, args.backward)?;
    let r = error_bound_width(pair);
    println!("r={r}");
    if let Some(g) = args.gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Config(format!("normalizer must be positive, got {g}")));
        }
        println!("lambda={}", r / g);
    }
    Ok(())
}

fn bdnn(args: BdnnArgs) -> stabstop_core::Result<()> {
    let p = read_bdnn_csv(&args.p)?;
    let q = read_bdnn_csv(&args.q)?;
    let kl = if args.simplified {
        bdnn_kl_bound_simplified(&p, &q)?
    } else {
        bdnn_kl_bound(&p, &q)?
    };
    println!("kl_bound={kl}");
    Ok(())
}
