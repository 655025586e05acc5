//! Sweeps over sample sizes: `t*(n)` per replication, aggregation, and the
//! log-log slope against the predicted exponent.
//!
//! Each `(n, replication)` task is independent and seeded with
//! `derive_seed(base_seed, [n, rep])`; the dataset stream and the sampling
//! stream are children `[0]` and `[1]` of that seed. Tasks run on the rayon
//! pool and are merged back in `(n, rep)` order, so the result does not
//! depend on the number of workers.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, SyntheticProblem};
use crate::seeds::derive_seed;
use crate::sgd::{argmin_checkpoint, geometric_checkpoints, run_sgd, RunResult, SamplingScheme, SgdConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// How per-replication `t*` values are combined for one `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    ArithmeticMean,
    GeometricMean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "arithmetic" | "arithmetic_mean" => Ok(Aggregation::ArithmeticMean),
            "geometric" | "geometric_mean" => Ok(Aggregation::GeometricMean),
            other => Err(Error::InvalidConfig(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub spec: ProblemSpec,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub scheme: SamplingScheme,
    /// `t_max = ceil(t_max_factor * n^e)` with `e` the predicted exponent
    /// (`alpha / (2 r alpha + 1)` for hard problems, 1 for easy ones).
    pub t_max_factor: f64,
    /// Ratio of the geometric checkpoint grid.
    pub checkpoint_ratio: f64,
    pub base_seed: u64,
    pub aggregation: Aggregation,
    /// Step size; `1 / (4 R^2)` when absent.
    pub gamma: Option<f64>,
}

impl SweepConfig {
    pub fn new(spec: ProblemSpec, n_grid: Vec<usize>, replications: usize) -> Self {
        Self {
            spec,
            n_grid,
            replications,
            scheme: SamplingScheme::WithReplacement,
            t_max_factor: 4.0,
            checkpoint_ratio: 1.1,
            base_seed: 0,
            aggregation: Aggregation::ArithmeticMean,
            gamma: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_grid.is_empty() {
            return Err(Error::InvalidConfig("n grid is empty".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::InvalidConfig("n grid contains 0".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("n grid must be strictly increasing".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if !(self.t_max_factor > 0.0) {
            return Err(Error::InvalidConfig("t_max factor must be positive".into()));
        }
        if !(self.checkpoint_ratio > 1.0) {
            return Err(Error::InvalidConfig("checkpoint ratio must exceed 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::InvalidConfig("gamma must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn t_max(&self, n: usize) -> u64 {
        let e = self.spec.theory_slope();
        (self.t_max_factor * (n as f64).powf(e)).ceil().max(1.0) as u64
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.spec.default_gamma())
    }

    pub fn run_seed(&self, n: usize, rep: usize) -> u64 {
        derive_seed(self.base_seed, &[n as u64, rep as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub t_star: u64,
    pub min_excess: f64,
    pub t_max: u64,
    pub trajectory: Vec<(u64, f64)>,
}

impl RunSummary {
    /// The argmin sits on the last checkpoint: the budget may be too small.
    pub fn capped(&self) -> bool {
        self.t_star == self.t_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub n: usize,
    /// Aggregated `t*` under the configured rule.
    pub t_star: f64,
    pub t_star_mean: f64,
    pub t_star_std: f64,
    pub t_star_geo_mean: f64,
    pub t_star_min: u64,
    pub t_star_max: u64,
    pub capped_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub config: SweepConfig,
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<AggregateRow>,
    pub timing: Timing,
}

impl SweepResult {
    /// Same content, ignoring timing.
    pub fn same_content(&self, other: &SweepResult) -> bool {
        self.schema_version == other.schema_version
            && self.config == other.config
            && self.runs == other.runs
            && self.aggregate == other.aggregate
    }
}

/// Checkpoint with minimal excess, ties to the earliest.
pub fn find_t_star(run: &RunResult) -> Result<u64> {
    argmin_checkpoint(&run.trajectory).map(|(t, _)| t)
}

fn run_one(problem: &SyntheticProblem, config: &SweepConfig, n: usize, rep: usize) -> Result<RunSummary> {
    let seed = config.run_seed(n, rep);
    let dataset = problem.sample_dataset(n, derive_seed(seed, &[0]))?;
    let gram = problem.kernel().gram(&dataset.xs)?;
    let risk = problem.risk_evaluator(&dataset.xs)?;
    let t_max = config.t_max(n);
    let sgd = SgdConfig {
        gamma: config.gamma(),
        t_max,
        scheme: config.scheme,
        checkpoints: geometric_checkpoints(t_max, n as u64, config.checkpoint_ratio),
        seed: derive_seed(seed, &[1]),
    };
    let run = run_sgd(&dataset, &gram, &sgd, |a| risk.eval(a))?;
    Ok(RunSummary {
        n,
        rep,
        seed,
        t_star: find_t_star(&run)?,
        min_excess: run.min_excess,
        t_max,
        trajectory: run.trajectory,
    })
}

pub fn aggregate_runs(runs: &[RunSummary], n: usize, rule: Aggregation) -> AggregateRow {
    let ts: Vec<f64> = runs.iter().filter(|r| r.n == n).map(|r| r.t_star as f64).collect();
    let k = ts.len() as f64;
    let mean = ts.iter().sum::<f64>() / k;
    let std = if ts.len() > 1 {
        (ts.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let geo = (ts.iter().map(|t| t.ln()).sum::<f64>() / k).exp();
    let capped = runs.iter().filter(|r| r.n == n && r.capped()).count() as f64 / k;
    AggregateRow {
        n,
        t_star: match rule {
            Aggregation::ArithmeticMean => mean,
            Aggregation::GeometricMean => geo,
        },
        t_star_mean: mean,
        t_star_std: std,
        t_star_geo_mean: geo,
        t_star_min: ts.iter().fold(f64::INFINITY, |a, &b| a.min(b)) as u64,
        t_star_max: ts.iter().fold(0.0f64, |a, &b| a.max(b)) as u64,
        capped_fraction: capped,
    }
}

/// Run every `(n, replication)` task of the sweep.
pub fn sweep(config: &SweepConfig) -> Result<SweepResult> {
    let problem = SyntheticProblem::new(config.spec)?;
    sweep_with(&problem, config)
}

/// Sweep with prebuilt kernel evaluators (they are shared read-only).
pub fn sweep_with(problem: &SyntheticProblem, config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    if problem.spec() != &config.spec {
        return Err(Error::InvalidConfig("problem does not match sweep spec".into()));
    }
    let start = Instant::now();
    let tasks: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |rep| (n, rep)))
        .collect();
    // Largest n first keeps the pool busy; results are re-sorted below.
    let mut runs = tasks
        .par_iter()
        .rev()
        .map(|&(n, rep)| {
            run_one(problem, config, n, rep).map_err(|e| Error::Run {
                n,
                rep,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| (r.n, r.rep));
    let aggregate = config
        .n_grid
        .iter()
        .map(|&n| aggregate_runs(&runs, n, config.aggregation))
        .collect();
    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        runs,
        aggregate,
        timing: Timing {
            elapsed_secs: start.elapsed().as_secs_f64(),
        },
    })
}

/// Least-squares line `y = slope x + intercept` with the slope's standard error.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let k = xs.len();
    if k < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    let kf = k as f64;
    let mx = xs.iter().sum::<f64>() / kf;
    let my = ys.iter().sum::<f64>() / kf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if k > 2 {
        let sse: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (sse / (kf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, intercept, stderr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub schema_version: u32,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub theory_slope: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Slope of each replication index across the grid.
    pub replication_slopes: Vec<f64>,
    pub replication_slope_std: f64,
    pub spec: ProblemSpec,
}

/// Fit `log t*` against `log n` on the aggregated table.
pub fn fit_slope(result: &SweepResult, tolerance: f64) -> Result<SlopeFit> {
    if result.aggregate.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "slope fit needs at least 3 grid points, got {}",
            result.aggregate.len()
        )));
    }
    let xs: Vec<f64> = result.aggregate.iter().map(|a| (a.n as f64).ln()).collect();
    let ys: Vec<f64> = result.aggregate.iter().map(|a| a.t_star.ln()).collect();
    let (slope, intercept, stderr) = fit_line(&xs, &ys)?;

    let reps = result.config.replications;
    let mut replication_slopes = Vec::with_capacity(reps);
    for rep in 0..reps {
        let pts: Vec<(f64, f64)> = result
            .runs
            .iter()
            .filter(|r| r.rep == rep)
            .map(|r| ((r.n as f64).ln(), (r.t_star as f64).ln()))
            .collect();
        if pts.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            replication_slopes.push(fit_line(&x, &y)?.0);
        }
    }
    let k = replication_slopes.len() as f64;
    let m = replication_slopes.iter().sum::<f64>() / k.max(1.0);
    let replication_slope_std = if k > 1.0 {
        (replication_slopes.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };

    let theory_slope = result.config.spec.theory_slope();
    Ok(SlopeFit {
        schema_version: SCHEMA_VERSION,
        slope,
        intercept,
        stderr,
        theory_slope,
        tolerance,
        pass: (slope - theory_slope).abs() <= tolerance,
        replication_slopes,
        replication_slope_std,
        spec: result.config.spec,
    })
}

pub fn persist<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json)?;
    Ok(())
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

fn load_versioned<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let probe: VersionProbe = serde_json::from_str(&text)?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_str(&text)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<SweepResult> {
    load_versioned(path)
}

pub fn load_slope(path: impl AsRef<Path>) -> Result<SlopeFit> {
    load_versioned(path)
}

/// Aggregate table as CSV: `n,t_star,t_star_mean,t_star_std,t_star_geo_mean,capped_fraction`.
pub fn export_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "n",
        "t_star",
        "t_star_mean",
        "t_star_std",
        "t_star_geo_mean",
        "capped_fraction",
    ])?;
    for a in &result.aggregate {
        w.write_record([
            a.n.to_string(),
            a.t_star.to_string(),
            a.t_star_mean.to_string(),
            a.t_star_std.to_string(),
            a.t_star_geo_mean.to_string(),
            a.capped_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two whitespace-separated columns `ln n  ln t*`, one row per grid point.
pub fn export_plot(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# ln_n ln_t_star")?;
    for a in &result.aggregate {
        writeln!(f, "{} {}", (a.n as f64).ln(), a.t_star.ln())?;
    }
    Ok(())
}
