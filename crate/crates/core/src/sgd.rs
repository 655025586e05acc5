//! Multi-pass averaged SGD for kernel least squares, in dual coordinates.
//!
//! Every iterate lives in the span of the training features, so it is stored
//! as a coefficient vector `a` over the dataset anchors. One step with
//! sampled index `i` reads row `i` of the Gram matrix:
//!
//! ```text
//! residual = y_i - K[i, :] . a
//! a_i     += gamma * residual
//! abar     = (1 - 1/u) abar + a / u
//! ```
//!
//! which costs `O(n)`. The averaged iterate `abar` is maintained alongside
//! `a`; risk is only evaluated at checkpoints.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Dataset;
use crate::seeds::{self, Rng as StreamRng};

/// How indices are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// i.i.d. uniform draws.
    WithReplacement,
    /// A fresh uniform permutation per epoch.
    WithoutReplacement,
    /// Dataset order, repeated.
    Cycle,
}

impl SamplingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingScheme::WithReplacement => "replacement",
            SamplingScheme::WithoutReplacement => "without",
            SamplingScheme::Cycle => "cycle",
        }
    }
}

impl std::str::FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replacement" | "with_replacement" => Ok(SamplingScheme::WithReplacement),
            "without" | "without_replacement" => Ok(SamplingScheme::WithoutReplacement),
            "cycle" => Ok(SamplingScheme::Cycle),
            other => Err(Error::InvalidConfig(format!("unknown sampling scheme {other:?}"))),
        }
    }
}

/// Index stream for one run. Indices are 0-based.
#[derive(Debug, Clone)]
pub struct Sampler {
    scheme: SamplingScheme,
    n: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: StreamRng,
}

impl Sampler {
    pub fn new(scheme: SamplingScheme, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("sampler needs n >= 1".into()));
        }
        Ok(Self {
            scheme,
            n,
            order: (0..n).collect(),
            cursor: n,
            rng: seeds::rng_from_seed(seed),
        })
    }

    pub fn scheme(&self) -> SamplingScheme {
        self.scheme
    }

    pub fn next_index(&mut self) -> usize {
        match self.scheme {
            SamplingScheme::WithReplacement => self.rng.random_range(0..self.n),
            SamplingScheme::WithoutReplacement => {
                if self.cursor == self.n {
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                let i = self.order[self.cursor];
                self.cursor += 1;
                i
            }
            SamplingScheme::Cycle => {
                if self.cursor == self.n {
                    self.cursor = 0;
                }
                let i = self.cursor;
                self.cursor += 1;
                i
            }
        }
    }
}

/// Free-function form of [`Sampler::next_index`].
pub fn next_index(sampler: &mut Sampler) -> usize {
    sampler.next_index()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub gamma: f64,
    pub t_max: u64,
    pub scheme: SamplingScheme,
    /// Strictly increasing iteration counts in `[1, t_max]`.
    pub checkpoints: Vec<u64>,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.t_max == 0 {
            return Err(Error::InvalidConfig("t_max must be >= 1".into()));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::InvalidConfig("no checkpoints".into()));
        }
        if self.checkpoints[0] == 0 || *self.checkpoints.last().unwrap() > self.t_max {
            return Err(Error::InvalidConfig("checkpoints must lie in [1, t_max]".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("checkpoints must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Geometric grid from 1 to `t_max` with the given ratio, always containing
/// `n` (when `n <= t_max`) and `t_max`.
pub fn geometric_checkpoints(t_max: u64, n: u64, ratio: f64) -> Vec<u64> {
    assert!(ratio > 1.0, "ratio must exceed 1");
    let mut points = vec![];
    let mut t = 1.0f64;
    while (t as u64) < t_max {
        points.push(t.round() as u64);
        t = (t * ratio).max(t + 1.0);
    }
    points.push(t_max);
    if (1..=t_max).contains(&n) {
        points.push(n);
    }
    points.sort_unstable();
    points.dedup();
    points
}

/// One SGD trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `(t, excess risk of the averaged iterate)` at each checkpoint.
    pub trajectory: Vec<(u64, f64)>,
    pub t_star: u64,
    pub min_excess: f64,
    /// Averaged dual coefficients at `t_max`.
    pub final_coeffs: Vec<f64>,
}

/// Checkpoint with minimal excess; ties go to the earliest.
pub fn argmin_checkpoint(trajectory: &[(u64, f64)]) -> Result<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for &(t, e) in trajectory {
        match best {
            Some((_, b)) if !(e < b) => {}
            _ => best = Some((t, e)),
        }
    }
    best.ok_or(Error::EmptyTrajectory)
}

/// Stepwise SGD state over a fixed Gram matrix.
#[derive(Debug, Clone)]
pub struct SgdEngine<'a> {
    gram: &'a DMatrix<f64>,
    ys: &'a [f64],
    gamma: f64,
    coeffs: Vec<f64>,
    averaged: Vec<f64>,
    steps: u64,
    sampler: Sampler,
}

impl<'a> SgdEngine<'a> {
    pub fn new(gram: &'a DMatrix<f64>, ys: &'a [f64], gamma: f64, scheme: SamplingScheme, seed: u64) -> Result<Self> {
        let n = ys.len();
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: gram.nrows(),
            });
        }
        Ok(Self {
            gram,
            ys,
            gamma,
            coeffs: vec![0.0; n],
            averaged: vec![0.0; n],
            steps: 0,
            sampler: Sampler::new(scheme, n, seed)?,
        })
    }

    /// Perform one step and return the sampled index.
    pub fn step(&mut self) -> usize {
        let i = self.sampler.next_index();
        // the Gram matrix is symmetric, so column i is row i and contiguous
        let row = self.gram.column(i);
        let pred: f64 = row.as_slice().iter().zip(&self.coeffs).map(|(k, a)| k * a).sum();
        self.coeffs[i] += self.gamma * (self.ys[i] - pred);

        self.steps += 1;
        let w = 1.0 / self.steps as f64;
        for (b, a) in self.averaged.iter_mut().zip(&self.coeffs) {
            *b += w * (a - *b);
        }
        i
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Current (non-averaged) coefficients.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Averaged coefficients over the iterates `1..=steps`.
    pub fn averaged(&self) -> &[f64] {
        &self.averaged
    }
}

/// Run averaged SGD and record `risk(averaged coefficients)` at each checkpoint.
pub fn run_sgd<F>(dataset: &Dataset, gram: &DMatrix<f64>, config: &SgdConfig, risk: F) -> Result<RunResult>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    let mut engine = SgdEngine::new(gram, &dataset.ys, config.gamma, config.scheme, config.seed)?;
    let mut trajectory = Vec::with_capacity(config.checkpoints.len());
    for &checkpoint in &config.checkpoints {
        while engine.steps() < checkpoint {
            engine.step();
        }
        trajectory.push((checkpoint, risk(engine.averaged())));
    }
    while engine.steps() < config.t_max {
        engine.step();
    }
    let (t_star, min_excess) = argmin_checkpoint(&trajectory)?;
    Ok(RunResult {
        trajectory,
        t_star,
        min_excess,
        final_coeffs: engine.averaged().to_vec(),
    })
}

/// Arithmetic mean of raw iterates; reference for the recursive average.
pub fn average_check(raw_iterates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = raw_iterates.first().ok_or(Error::EmptyTrajectory)?;
    let mut sum = vec![0.0; first.len()];
    for it in raw_iterates {
        if it.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                found: it.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(it) {
            *s += v;
        }
    }
    let k = raw_iterates.len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}
