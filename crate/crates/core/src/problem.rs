//! Synthetic spline-kernel regression problems and their exact excess risk.
//!
//! Inputs are uniform on `[0, 1]`, the kernel is `Lambda_alpha` and the
//! regression function is `f*(x) = Lambda_{r alpha + 1/2}(x)`, observed
//! under Gaussian noise of standard deviation `sigma`. Since kernels of
//! different orders compose in `L2(uniform)`, the excess risk of any dual
//! model `f = sum_i a_i Lambda_alpha(. - x_i)` is a quadratic form:
//!
//! ```text
//! ||f - f*||^2 = sum_ij a_i a_j Lambda_{2 alpha}(x_i - x_j)
//!              - 2 sum_i a_i Lambda_{alpha + r alpha + 1/2}(x_i)
//!              + 2 zeta(2 r alpha + 1)
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, reduce, KernelEvaluator};
use crate::seeds;

/// Noise level used when none is given.
pub const DEFAULT_SIGMA: f64 = 0.2;

/// Parameters of a synthetic problem. Everything else is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Eigenvalue decay exponent, also the kernel order.
    pub alpha: f64,
    /// Source exponent.
    pub r: f64,
    /// Noise standard deviation.
    pub sigma: f64,
}

impl ProblemSpec {
    pub fn new(alpha: f64, r: f64, sigma: f64) -> Result<Self> {
        let spec = Self { alpha, r, sigma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha must be > 1, got {}", self.alpha)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidConfig(format!("r must be > 0, got {}", self.r)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Order of the target function, `r alpha + 1/2`.
    pub fn target_order(&self) -> f64 {
        self.r * self.alpha + 0.5
    }

    /// `R^2 = Lambda_alpha(0) = 2 zeta(alpha)`, the bound on `||Phi(x)||^2`.
    pub fn r_squared(&self) -> f64 {
        2.0 * kernel::zeta(self.alpha).expect("alpha > 1 checked at construction")
    }

    /// Capacity exponent of the hypothesis-space condition; `1 / alpha` here.
    pub fn mu(&self) -> f64 {
        1.0 / self.alpha
    }

    /// `1 / (4 R^2)`.
    pub fn default_gamma(&self) -> f64 {
        0.25 / self.r_squared()
    }

    /// `(alpha - 1) / (2 alpha)`: problems with `r` at or below are hard.
    pub fn hardness_threshold(&self) -> f64 {
        (self.alpha - 1.0) / (2.0 * self.alpha)
    }

    pub fn is_hard(&self) -> bool {
        self.r <= self.hardness_threshold()
    }

    /// Predicted exponent of `t*(n)`: 1 for easy problems,
    /// `alpha / (2 r alpha + 1)` for hard ones.
    pub fn theory_slope(&self) -> f64 {
        if self.r >= self.hardness_threshold() {
            1.0
        } else {
            self.alpha / (2.0 * self.r * self.alpha + 1.0)
        }
    }
}

/// A sample `(x_i, y_i)` drawn from a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub seed: u64,
    pub spec: ProblemSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// `f(x) = sum_i coeffs_i Lambda_order(x - anchors_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualModel {
    pub anchors: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub order: f64,
}

impl DualModel {
    pub fn new(anchors: Vec<f64>, coeffs: Vec<f64>, order: f64) -> Result<Self> {
        if anchors.len() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: anchors.len(),
                found: coeffs.len(),
            });
        }
        Ok(Self { anchors, coeffs, order })
    }

    pub fn zero(anchors: Vec<f64>, order: f64) -> Self {
        let coeffs = vec![0.0; anchors.len()];
        Self { anchors, coeffs, order }
    }

    /// Evaluate at `x` with a kernel of the model's order.
    pub fn eval(&self, kernel: &KernelEvaluator, x: f64) -> Result<f64> {
        self.anchors
            .iter()
            .zip(&self.coeffs)
            .map(|(a, c)| kernel.eval(x - a).map(|k| c * k))
            .sum()
    }
}

/// A problem together with the kernel evaluators it needs.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    spec: ProblemSpec,
    kernel: Arc<KernelEvaluator>,
    square: Arc<KernelEvaluator>,
    cross: Arc<KernelEvaluator>,
    target: Arc<KernelEvaluator>,
    target_norm_sq: f64,
}

impl SyntheticProblem {
    /// Closed forms where available, default tables otherwise.
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        Self::build(spec, KernelEvaluator::new)
    }

    /// Closed forms or the series expansion; cheaper to build.
    pub fn exact(spec: ProblemSpec) -> Result<Self> {
        Self::build(spec, KernelEvaluator::exact)
    }

    fn build(spec: ProblemSpec, make: fn(f64) -> Result<KernelEvaluator>) -> Result<Self> {
        spec.validate()?;
        let t = spec.target_order();
        Ok(Self {
            spec,
            kernel: Arc::new(make(spec.alpha)?),
            square: Arc::new(make(2.0 * spec.alpha)?),
            cross: Arc::new(make(spec.alpha + t)?),
            target: Arc::new(make(t)?),
            target_norm_sq: 2.0 * kernel::zeta(2.0 * t)?,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    /// Evaluator for `Lambda_alpha`.
    pub fn kernel(&self) -> &KernelEvaluator {
        &self.kernel
    }

    /// `||f*||^2 = 2 zeta(2 r alpha + 1)`.
    pub fn target_norm_sq(&self) -> f64 {
        self.target_norm_sq
    }

    /// Draw `n` i.i.d. pairs; deterministic in `seed`.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        let mut rng = seeds::rng_from_seed(seed);
        let singular = self.spec.target_order() <= 1.0;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        while xs.len() < n {
            let x: f64 = rng.random();
            if singular && reduce(x) < f64::EPSILON {
                continue;
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            xs.push(x);
            ys.push(self.target.eval(x)? + self.spec.sigma * noise);
        }
        Ok(Dataset {
            xs,
            ys,
            seed,
            spec: self.spec,
        })
    }

    /// `f*(x) = Lambda_{r alpha + 1/2}(x)`.
    pub fn target_eval(&self, x: f64) -> Result<f64> {
        self.target.eval(x)
    }

    fn check_order(&self, model: &DualModel) -> Result<()> {
        if (model.order - self.spec.alpha).abs() > 1e-12 {
            return Err(Error::OrderMismatch {
                model: model.order,
                problem: self.spec.alpha,
            });
        }
        Ok(())
    }

    /// Exact excess risk `||f - f*||^2_{L2(uniform)}`.
    pub fn excess_risk(&self, model: &DualModel) -> Result<f64> {
        self.check_order(model)?;
        Ok(self.risk_evaluator(&model.anchors)?.eval(&model.coeffs))
    }

    /// Precompute the quadratic form for a fixed set of anchors.
    pub fn risk_evaluator(&self, anchors: &[f64]) -> Result<RiskEvaluator> {
        let square = self.square.gram(anchors)?;
        let linear = anchors
            .iter()
            .map(|&x| self.cross.eval(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(RiskEvaluator {
            square,
            linear: DVector::from_vec(linear),
            constant: self.target_norm_sq,
        })
    }

    /// Monte Carlo estimate of `E_x (f(x) - f*(x))^2` over `m` uniform points,
    /// with its standard error. Deterministic in `seed`.
    pub fn excess_risk_mc(&self, model: &DualModel, m: usize, seed: u64) -> Result<(f64, f64)> {
        self.check_order(model)?;
        if m < 100 {
            return Err(Error::InvalidConfig("Monte Carlo needs m >= 100".into()));
        }
        const CHUNK: usize = 1 << 14;
        let chunks = m.div_ceil(CHUNK);
        let singular = self.spec.target_order() <= 1.0;
        let partial = (0..chunks)
            .into_par_iter()
            .map(|c| -> Result<(f64, f64)> {
                let mut rng = seeds::rng_from_seed(seeds::derive_seed(seed, &[c as u64]));
                let count = CHUNK.min(m - c * CHUNK);
                let (mut s1, mut s2) = (0.0, 0.0);
                let mut done = 0;
                while done < count {
                    let x: f64 = rng.random();
                    if singular && reduce(x) < f64::EPSILON {
                        continue;
                    }
                    let d = model.eval(&self.kernel, x)? - self.target.eval(x)?;
                    let d2 = d * d;
                    s1 += d2;
                    s2 += d2 * d2;
                    done += 1;
                }
                Ok((s1, s2))
            })
            .collect::<Result<Vec<_>>>()?;
        let (s1, s2) = partial.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
        let mf = m as f64;
        let mean = s1 / mf;
        let var = (s2 / mf - mean * mean).max(0.0) * mf / (mf - 1.0);
        Ok((mean, (var / mf).sqrt()))
    }
}

/// `a^T S a - 2 a^T l + c` for a fixed anchor set.
#[derive(Debug, Clone)]
pub struct RiskEvaluator {
    square: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl RiskEvaluator {
    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn eval(&self, coeffs: &[f64]) -> f64 {
        assert_eq!(coeffs.len(), self.len(), "coefficient length");
        let n = self.len();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for j in 0..n {
            let col = self.square.column(j);
            let s: f64 = col.iter().zip(coeffs).map(|(k, a)| k * a).sum();
            quad += coeffs[j] * s;
            lin += coeffs[j] * self.linear[j];
        }
        quad - 2.0 * lin + self.constant
    }
}
