//! Command-line interface.
//!
//! Exit codes: 0 success (or all checks pass), 1 runtime failure or a
//! failing check, 2 usage or input validation error. Every command accepts
//! `--config FILE` (TOML with the same keys as the long flags, underscores
//! for dashes); flags win over the file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checks::{
    filter_check, kernel_check, semistoch_check, CheckReport, FilterCheckConfig, KernelCheckConfig,
    SemiStochCheckConfig,
};
use crate::diagnostics::{default_window, effective_dimension, fit_alpha, fit_r, ingest_features, load_features};
use crate::error::{Error, Result};
use crate::harness::{self, Aggregation, SweepConfig};
use crate::problem::{ProblemSpec, DEFAULT_SIGMA};
use crate::sgd::SamplingScheme;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MPSGD_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "mpsgd",
    version,
    about = "Multi-pass averaged SGD for kernel least squares: t*(n) sweeps, slope fits and property checks"
)]
pub struct Cli {
    /// Worker threads [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep sample sizes, record t*(n) per replication and aggregate
    Sweep(SweepArgs),
    /// Fit the log-log slope of a sweep result against the predicted exponent
    Slope(SlopeArgs),
    /// Filter inequalities, iterative/spectral equivalence, batch monotonicity
    FilterCheck(FilterArgs),
    /// Semi-stochastic closed form and the SGD variance bound
    SemistochCheck(SemiStochArgs),
    /// Kernel convolution identity, symmetry and periodicity
    KernelCheck(KernelArgs),
    /// Estimate the decay and source exponents from a feature CSV
    Estimate(EstimateArgs),
}

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    /// TOML file with default values for any of the flags below
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Eigenvalue decay exponent, > 1 (required here or in the config file)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Source exponent, > 0 (required here or in the config file)
    #[arg(long)]
    pub r: Option<f64>,
    /// Noise standard deviation [default: 0.2]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated increasing sample sizes [default: 64,128,256,512]
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Replications per sample size [default: 10]
    #[arg(long)]
    pub reps: Option<usize>,
    /// replacement | without | cycle [default: replacement]
    #[arg(long)]
    pub sampling: Option<String>,
    /// Base seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result file [default: $MPSGD_OUT_DIR/sweep.json, else ./sweep.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Budget t_max = ceil(factor * n^e), e the predicted exponent [default: 4]
    #[arg(long)]
    pub t_max_factor: Option<f64>,
    /// Ratio of the geometric checkpoint grid [default: 1.1]
    #[arg(long)]
    pub checkpoint_ratio: Option<f64>,
    /// mean | geometric [default: mean]
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Step size [default: 1/(4 R^2)]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Also write the aggregate table as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write two columns (ln n, ln t*)
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    alpha: Option<f64>,
    r: Option<f64>,
    sigma: Option<f64>,
    n_grid: Option<Vec<usize>>,
    reps: Option<usize>,
    sampling: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    t_max_factor: Option<f64>,
    checkpoint_ratio: Option<f64>,
    aggregation: Option<String>,
    gamma: Option<f64>,
    csv: Option<PathBuf>,
    plot: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SlopeArgs {
    /// Sweep result JSON
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Allowed |slope - predicted slope| [default: 0.25]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Also write the fit as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct FilterArgs {
    /// TOML file overriding the built-in parameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Step size [default: 1/(4 R^2) of the problem]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Kernel order of the test problem [default: 2]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Source exponent of the test problem [default: 0.25]
    #[arg(long)]
    pub r: Option<f64>,
    /// Seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file [default: $MPSGD_OUT_DIR/filter-check.json if set]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SemiStochArgs {
    /// TOML file overriding the built-in parameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Monte Carlo replications [default: 1000]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Dimension of the power-law system [default: 50]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Noise scale [default: 1]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file [default: $MPSGD_OUT_DIR/semistoch-check.json if set]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct KernelArgs {
    /// TOML file overriding the built-in parameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random (x, z) pairs per order pair [default: 20]
    #[arg(long)]
    pub points: Option<usize>,
    /// Absolute tolerance of the convolution identity [default: 1e-5]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file [default: $MPSGD_OUT_DIR/kernel-check.json if set]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EstimateArgs {
    /// Feature CSV: one row per sample; last column is the label unless --labels is given
    #[arg(long)]
    pub features: PathBuf,
    /// Label file with one value per row
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Field delimiter [default: ,]
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// 1-based eigenvalue window lo,hi [default: 3,d/4]
    #[arg(long, value_delimiter = ',')]
    pub window: Option<Vec<usize>>,
    /// Also write the estimate as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Estimate {
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
    pub samples: usize,
    pub dimension: usize,
    pub rank: usize,
    pub window: (usize, usize),
    pub alpha_hat: Option<f64>,
    pub alpha_r_squared: Option<f64>,
    pub beta_hat: Option<f64>,
    pub r_hat: Option<f64>,
    pub notes: Vec<String>,
    /// `(lambda, N(lambda))` on a log grid below the top eigenvalue.
    pub effective_dimension: Vec<(f64, f64)>,
}

/// Why a command stopped.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
    /// The command ran but its check did not pass.
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidOrder { .. } | Error::MalformedInput(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other),
        }
    }
}

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> std::result::Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn default_out(name: &str) -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).map(|d| PathBuf::from(d).join(name))
}

fn usage_error(msg: &str) -> Failure {
    Failure::Usage(msg.to_string())
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, Failure> {
    s.parse::<T>().map_err(Failure::from)
}

fn sweep_config(
    args: &SweepArgs,
) -> std::result::Result<(SweepConfig, PathBuf, Option<PathBuf>, Option<PathBuf>), Failure> {
    let file: SweepFile = read_toml(args.config.as_deref())?;
    let alpha = args
        .alpha
        .or(file.alpha)
        .ok_or_else(|| usage_error("--alpha is required"))?;
    let r = args.r.or(file.r).ok_or_else(|| usage_error("--r is required"))?;
    let sigma = args.sigma.or(file.sigma).unwrap_or(DEFAULT_SIGMA);
    let spec = ProblemSpec::new(alpha, r, sigma)?;
    let n_grid = args
        .n_grid
        .clone()
        .or(file.n_grid)
        .unwrap_or_else(|| vec![64, 128, 256, 512]);
    let mut config = SweepConfig::new(spec, n_grid, args.reps.or(file.reps).unwrap_or(10));
    if let Some(s) = args.sampling.as_deref().or(file.sampling.as_deref()) {
        config.scheme = parse::<SamplingScheme>(s)?;
    }
    if let Some(a) = args.aggregation.as_deref().or(file.aggregation.as_deref()) {
        config.aggregation = parse::<Aggregation>(a)?;
    }
    config.base_seed = args.seed.or(file.seed).unwrap_or(0);
    config.t_max_factor = args.t_max_factor.or(file.t_max_factor).unwrap_or(config.t_max_factor);
    config.checkpoint_ratio = args
        .checkpoint_ratio
        .or(file.checkpoint_ratio)
        .unwrap_or(config.checkpoint_ratio);
    config.gamma = args.gamma.or(file.gamma);
    config.validate()?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .or_else(|| default_out("sweep.json"))
        .unwrap_or_else(|| PathBuf::from("sweep.json"));
    Ok((
        config,
        out,
        args.csv.clone().or(file.csv),
        args.plot.clone().or(file.plot),
    ))
}

fn cmd_sweep(args: &SweepArgs) -> std::result::Result<(), Failure> {
    let (config, out, csv, plot) = sweep_config(args)?;
    println!(
        "effective config: {}",
        serde_json::to_string(&config).map_err(Error::from)?
    );
    let result = harness::sweep(&config)?;
    harness::persist(&result, &out)?;
    if let Some(p) = &csv {
        harness::export_csv(&result, p)?;
    }
    if let Some(p) = &plot {
        harness::export_plot(&result, p)?;
    }
    println!(
        "{:>8} {:>14} {:>14} {:>14} {:>8}",
        "n", "t*", "t* std", "t* geo", "capped"
    );
    for a in &result.aggregate {
        println!(
            "{:>8} {:>14.1} {:>14.1} {:>14.1} {:>8.2}",
            a.n, a.t_star, a.t_star_std, a.t_star_geo_mean, a.capped_fraction
        );
    }
    println!("wrote {} ({:.2} s)", out.display(), result.timing.elapsed_secs);
    Ok(())
}

fn cmd_slope(args: &SlopeArgs) -> std::result::Result<(), Failure> {
    let tolerance = args.tolerance.unwrap_or(0.25);
    if !(tolerance >= 0.0) {
        return Err(usage_error("--tolerance must be non-negative"));
    }
    let result = harness::load(&args.input)?;
    let fit = harness::fit_slope(&result, tolerance)?;
    println!("{}", serde_json::to_string_pretty(&fit).map_err(Error::from)?);
    if let Some(p) = &args.out {
        harness::persist(&fit, p)?;
    }
    if fit.pass {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn finish_report(report: &CheckReport, out: Option<PathBuf>, name: &str) -> std::result::Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(report).map_err(Error::from)?);
    if let Some(p) = out.or_else(|| default_out(&format!("{name}.json"))) {
        harness::persist(report, &p)?;
    }
    for item in report.failures() {
        eprintln!("FAIL {}: {} > {}", item.name, item.value, item.threshold);
    }
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn cmd_filter(args: &FilterArgs) -> std::result::Result<(), Failure> {
    let mut c: FilterCheckConfig = read_toml(args.config.as_deref())?;
    if args.gamma.is_some() {
        c.gamma = args.gamma;
    }
    c.alpha = args.alpha.unwrap_or(c.alpha);
    c.r = args.r.unwrap_or(c.r);
    c.seed = args.seed.unwrap_or(c.seed);
    if let Some(g) = c.gamma {
        if !(g > 0.0) {
            return Err(usage_error("--gamma must be positive"));
        }
    }
    let report = filter_check(&c)?;
    finish_report(&report, args.out.clone(), "filter-check")
}

fn cmd_semistoch(args: &SemiStochArgs) -> std::result::Result<(), Failure> {
    let mut c: SemiStochCheckConfig = read_toml(args.config.as_deref())?;
    c.reps = args.reps.unwrap_or(c.reps);
    c.dim = args.dim.unwrap_or(c.dim);
    c.sigma = args.sigma.unwrap_or(c.sigma);
    c.seed = args.seed.unwrap_or(c.seed);
    if c.dim == 0 || c.reps < 2 || !(c.sigma >= 0.0) {
        return Err(usage_error("need --dim >= 1, --reps >= 2, --sigma >= 0"));
    }
    let report = semistoch_check(&c)?;
    finish_report(&report, args.out.clone(), "semistoch-check")
}

fn cmd_kernel(args: &KernelArgs) -> std::result::Result<(), Failure> {
    let mut c: KernelCheckConfig = read_toml(args.config.as_deref())?;
    c.points = args.points.unwrap_or(c.points);
    c.tolerance = args.tolerance.unwrap_or(c.tolerance);
    c.seed = args.seed.unwrap_or(c.seed);
    let report = kernel_check(&c)?;
    finish_report(&report, args.out.clone(), "kernel-check")
}

/// Fit both exponents on the spectrum of a feature matrix.
pub fn estimate(args: &EstimateArgs) -> Result<Estimate> {
    if !args.delimiter.is_ascii() {
        return Err(Error::InvalidConfig(
            "delimiter must be a single ASCII character".into(),
        ));
    }
    let (x, y) = load_features(&args.features, args.labels.as_deref(), args.delimiter as u8)?;
    let spectrum = ingest_features(&x, &y)?;
    let d = spectrum.eigs.len();
    let window = match args.window.as_deref() {
        Some(&[lo, hi]) => (lo, hi),
        Some(_) => return Err(Error::InvalidConfig("--window takes two values lo,hi".into())),
        None => default_window(d),
    };
    let mut notes = Vec::new();
    let (alpha_hat, alpha_r_squared) = match fit_alpha(&spectrum.eigs, window) {
        Ok(f) => (Some(f.alpha_hat), Some(f.r_squared)),
        Err(e) => {
            notes.push(format!("alpha not estimated: {e}"));
            (None, None)
        }
    };
    let (beta_hat, r_hat) = match alpha_hat {
        Some(a) if a > 1.0 => match fit_r(&spectrum.eigs, &spectrum.coefficients, a, window) {
            Ok(s) => (Some(s.beta_hat).filter(|b| b.is_finite()), Some(s.r_hat)),
            Err(e) => {
                notes.push(format!("r not estimated: {e}"));
                (None, None)
            }
        },
        Some(a) => {
            notes.push(format!("r not estimated: alpha_hat = {a} is not above 1"));
            (None, None)
        }
        None => (None, None),
    };
    let top = spectrum.eigs[0].max(f64::MIN_POSITIVE);
    let curve = (0..=8)
        .map(|k| {
            let lambda = top * 10f64.powi(-k);
            effective_dimension(&spectrum.eigs, lambda).map(|nl| (lambda, nl))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate {
        features: args.features.clone(),
        labels: args.labels.clone(),
        samples: x.nrows(),
        dimension: d,
        rank: spectrum.rank,
        window,
        alpha_hat,
        alpha_r_squared,
        beta_hat,
        r_hat,
        notes,
        effective_dimension: curve,
    })
}

fn cmd_estimate(args: &EstimateArgs) -> std::result::Result<(), Failure> {
    let est = estimate(args).map_err(|e| match e {
        Error::Csv(_) | Error::DimensionMismatch { .. } => Failure::Usage(e.to_string()),
        other => Failure::from(other),
    })?;
    println!("{}", serde_json::to_string_pretty(&est).map_err(Error::from)?);
    if let Some(p) = &args.out {
        harness::persist(&est, p)?;
    }
    Ok(())
}

/// Run the parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            Cli::command()
                .error(clap::error::ErrorKind::InvalidValue, "--jobs must be at least 1")
                .exit();
        }
        // fails only if a pool already exists, in which case it is reused
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let outcome = match &cli.command {
        Command::Sweep(a) => cmd_sweep(a),
        Command::Slope(a) => cmd_slope(a),
        Command::FilterCheck(a) => cmd_filter(a),
        Command::SemistochCheck(a) => cmd_semistoch(a),
        Command::KernelCheck(a) => cmd_kernel(a),
        Command::Estimate(a) => cmd_estimate(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Check) => 1,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            2
        }
    }
}
