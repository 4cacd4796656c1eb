//! Command-line front end: `test` on user data, `simulate` from a config.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fewclusters_core::estimators::{estimate_all, EstimatorKind};
use fewclusters_core::permutation::run_placebo_test;
use fewclusters_core::{Adjustment, ClusterDataset, Error, Side, TestConfig, TestResult, Warning};
use serde::{Deserialize, Serialize};

use crate::comparators::{
    bch_t_test, crs_sign_test, im_t_test, pair_clusters, pooled_ols_crve,
    wild_cluster_bootstrap_test, ComparatorError, Pairing, DEFAULT_BOOTSTRAP_REPS,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::harness::{run_experiment, HarnessError};
use crate::input::{load_dataset, InputError};
use crate::report::{emit_csv, emit_svg};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INAPPLICABLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fewclusters",
    version,
    about = "Placebo inference with few treated and untreated clusters"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FEWCLUSTERS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test for a treatment effect on clustered CSV data and print a JSON report.
    Test(TestArgs),
    /// Run a Monte Carlo experiment and write a rejection table and chart.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Placebo,
    Im,
    Crs,
    Wildboot,
    Bch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    Ols,
    Did,
    Probit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideArg {
    Greater,
    Less,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairingArg {
    Random,
    BySize,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "placebo")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "ols")]
    pub estimator: EstimatorArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "greater")]
    pub side: SideArg,
    /// Placebo test without the variance adjustment.
    #[arg(long)]
    pub unadjusted: bool,
    /// Use this many random placebo assignments instead of all of them.
    #[arg(long = "max-perms")]
    pub max_perms: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cluster matching for the sign-change test.
    #[arg(long, value_enum, default_value = "random")]
    pub pairing: PairingArg,
    /// Randomized sign-change test.
    #[arg(long)]
    pub randomized: bool,
    #[arg(long = "bootstrap-reps", default_value_t = DEFAULT_BOOTSTRAP_REPS)]
    pub bootstrap_reps: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Machine-readable output of `fewclusters test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: MethodArg,
    pub estimator: EstimatorArg,
    pub side: SideArg,
    pub alpha: f64,
    /// Infinite values are written as `null`.
    pub statistic: Option<f64>,
    pub critical_value: Option<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub n_assignments: usize,
    pub randomized_threshold: Option<f64>,
    pub randomized: bool,
    pub adjusted: Option<bool>,
    pub warnings: Vec<String>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn warning_name(w: &Warning) -> String {
    match w {
        Warning::ZeroPower => "ZeroPowerWarning".into(),
        Warning::DegeneratePlaceboVariance { count } => {
            format!("DegeneratePlaceboVarianceWarning({count})")
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("{0}")]
    Data(Error),
    #[error("{0}")]
    Inapplicable(String),
    #[error(transparent)]
    Config(ConfigError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Data(_) | CliError::Config(_) => EXIT_DATA,
            CliError::Inapplicable(_) => EXIT_INAPPLICABLE,
            CliError::Io(_) => EXIT_FAILURE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::GroupTooSmall { .. } | Error::TooManyAssignments { .. } => {
                CliError::Inapplicable(e.to_string())
            }
            other => CliError::Data(other),
        }
    }
}

impl From<ComparatorError> for CliError {
    fn from(e: ComparatorError) -> Self {
        match e {
            ComparatorError::Unbalanced { .. } => CliError::Inapplicable(e.to_string()),
            ComparatorError::Core(c) => c.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(HarnessError::MethodInapplicable { .. }) => {
                CliError::Inapplicable(e.to_string())
            }
            other => CliError::Config(other),
        }
    }
}

fn estimator_kind(e: EstimatorArg) -> EstimatorKind {
    match e {
        EstimatorArg::Ols => EstimatorKind::OlsIntercept,
        EstimatorArg::Did => EstimatorKind::DidSlope,
        EstimatorArg::Probit => EstimatorKind::Probit,
    }
}

fn side(s: SideArg) -> Side {
    match s {
        SideArg::Greater => Side::Greater,
        SideArg::Less => Side::Less,
        SideArg::Two => Side::TwoSided,
    }
}

fn crs_pair_estimates(args: &TestArgs, data: &ClusterDataset) -> Result<Vec<f64>, CliError> {
    let sizes: Vec<usize> = data.clusters().iter().map(|c| c.size()).collect();
    let strategy = match args.pairing {
        PairingArg::Random => Pairing::Random { seed: args.seed },
        PairingArg::BySize => Pairing::BySize,
    };
    let pairs = pair_clusters(data.layout(), &sizes, strategy)?;
    if args.estimator == EstimatorArg::Ols {
        let clusters = data.clusters();
        pairs
            .iter()
            .map(|&(t, u)| {
                let pair = ClusterDataset::new(vec![clusters[t].clone(), clusters[u].clone()])?;
                Ok(pooled_ols_crve(&pair)?.beta_hat)
            })
            .collect()
    } else {
        let x = estimate_all(data, estimator_kind(args.estimator))?;
        Ok(pairs
            .iter()
            .map(|&(t, u)| x.values()[t] - x.values()[u])
            .collect())
    }
}

fn run_test(args: &TestArgs) -> Result<TestResult, CliError> {
    let data = load_dataset(&args.input)?;
    let side = side(args.side);
    let pooled = matches!(args.method, MethodArg::Wildboot | MethodArg::Bch);
    if pooled && args.estimator != EstimatorArg::Ols {
        return Err(CliError::Inapplicable(format!(
            "method {:?} is a pooled linear regression test and needs --estimator ols",
            args.method
        )));
    }
    let result = match args.method {
        MethodArg::Placebo => {
            let x = estimate_all(&data, estimator_kind(args.estimator))?;
            let adjustment = if args.unadjusted {
                Adjustment::Unadjusted
            } else {
                Adjustment::Adjusted
            };
            let cfg = TestConfig::new(args.alpha)
                .side(side)
                .adjustment(adjustment)
                .max_assignments(args.max_perms)
                .seed(args.seed);
            run_placebo_test(&x, &cfg)?
        }
        MethodArg::Im => {
            let x = estimate_all(&data, estimator_kind(args.estimator))?;
            im_t_test(&x, args.alpha, side)?
        }
        MethodArg::Crs => {
            let b = crs_pair_estimates(args, &data)?;
            crs_sign_test(&b, args.alpha, side, args.randomized, args.seed)?
        }
        MethodArg::Bch => bch_t_test(&pooled_ols_crve(&data)?, args.alpha, side)?,
        MethodArg::Wildboot => {
            wild_cluster_bootstrap_test(&data, args.alpha, side, args.bootstrap_reps, args.seed)?
        }
    };
    Ok(result)
}

pub fn report(args: &TestArgs, r: &TestResult) -> TestReport {
    TestReport {
        method: args.method,
        estimator: args.estimator,
        side: args.side,
        alpha: args.alpha,
        statistic: finite(r.statistic),
        critical_value: finite(r.critical_value),
        p_value: r.p_value,
        reject: r.reject,
        n_assignments: r.n_assignments,
        randomized_threshold: r.randomized_threshold,
        randomized: r.randomized,
        adjusted: r.adjustment.map(|a| a == Adjustment::Adjusted),
        warnings: r.warnings.iter().map(warning_name).collect(),
    }
}

fn cmd_test(args: &TestArgs) -> Result<(), CliError> {
    let result = run_test(args)?;
    let json = serde_json::to_string_pretty(&report(args, &result))
        .map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{json}").map_err(|e| CliError::Io(e.to_string()))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let config = ExperimentConfig::load(&args.config)?;
    let spec = config.to_spec()?;
    let table = run_experiment(&spec).map_err(|e| CliError::from(ConfigError::Invalid(e)))?;
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    std::fs::create_dir_all(&args.out).map_err(io)?;
    let csv_path = args.out.join("rejection_table.csv");
    let svg_path = args
        .out
        .join(format!("rejection_{}.svg", spec.sweep.param.name()));
    emit_csv(&table, &csv_path).map_err(io)?;
    emit_svg(&table, spec.alpha, &svg_path).map_err(io)?;
    println!(
        "{} methods x {} {} values x {} replications (seed {})",
        spec.methods.len(),
        spec.sweep.values.len(),
        spec.sweep.param.name(),
        spec.replications,
        spec.master_seed
    );
    for method in &spec.methods {
        let rates: Vec<String> = table
            .series(*method)
            .iter()
            .map(|(_, r)| format!("{r:.4}"))
            .collect();
        println!("{:<20} {}", method.name(), rates.join(" "));
    }
    println!("wrote {}", csv_path.display());
    println!("wrote {}", svg_path.display());
    Ok(())
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let outcome = match &cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
