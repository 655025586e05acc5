//! Desk-scale property suites behind the `*-check` commands. Each returns a
//! [`CheckReport`] with one item per assertion and the configuration echoed.

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batch::{check_filter, lambda_max_normalized, run_batch_gd, spectral_solution};
use crate::error::Result;
use crate::kernel::KernelEvaluator;
use crate::problem::{ProblemSpec, SyntheticProblem};
use crate::seeds::{derive_seed, rng_from_seed};
use crate::semistoch::SemiStochSystem;
use crate::sgd::{SamplingScheme, SgdEngine};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub value: f64,
    /// Pass iff `value <= threshold`.
    pub threshold: f64,
    pub pass: bool,
}

impl CheckItem {
    pub fn new(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub schema_version: u32,
    pub check: String,
    pub config: serde_json::Value,
    pub items: Vec<CheckItem>,
    pub pass: bool,
}

impl CheckReport {
    fn new(check: &str, config: &impl Serialize, items: Vec<CheckItem>) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            check: check.into(),
            config: serde_json::to_value(config)?,
            pass: items.iter().all(|i| i.pass),
            items,
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|i| !i.pass)
    }
}

/// Tanh-sinh quadrature of `f` over `[a, b]`. The integrand is called with
/// `(s, d)` where `d` is the distance from `s` to the nearest endpoint,
/// which keeps endpoint singularities resolvable.
pub fn tanh_sinh<F: Fn(f64, f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let half = 0.5 * (b - a);
    let pi2 = std::f64::consts::FRAC_PI_2;
    let mut h = 1.0;
    let mut prev = f64::NAN;
    let mut sum = 0.0;
    // level 0 sums all nodes k h; later levels add only the odd multiples
    for level in 0..12 {
        let mut k: i64 = if level == 0 { 0 } else { 1 };
        let stride = if level == 0 { 1 } else { 2 };
        let mut part = 0.0;
        loop {
            let t = k as f64 * h;
            let s = pi2 * t.sinh();
            // 1 - tanh(s), computed without cancellation
            let delta = 2.0 / (1.0 + (2.0 * s).exp());
            let w = pi2 * t.cosh() / s.cosh().powi(2);
            let d = half * delta;
            if d == 0.0 || w < 1e-300 {
                break;
            }
            let mut v = w * f(b - d, d);
            if k != 0 {
                v += w * f(a + d, d);
            }
            part += v;
            k += stride;
        }
        sum += part;
        let est = half * h * sum;
        if level > 2 && (est - prev).abs() <= tol * est.abs().max(1.0) {
            return est;
        }
        prev = est;
        // halving h keeps every node already summed
        h *= 0.5;
    }
    prev
}

/// `int_0^1 Lambda_q(x - s) Lambda_q'(z - s) ds`, split at the singular
/// points `s = x` and `s = z`.
pub fn convolution_quadrature(q: f64, q_prime: f64, x: f64, z: f64) -> Result<f64> {
    let kq = KernelEvaluator::exact(q)?;
    let kp = KernelEvaluator::exact(q_prime)?;
    // within one ulp of the singular point of a q <= 1 kernel the argument
    // is clamped; the quadrature weight there is below 1e-16
    let eval = |k: &KernelEvaluator, u: f64| -> f64 {
        let u = if k.order() <= 1.0 && reduce_dist(u) < f64::EPSILON {
            f64::EPSILON
        } else {
            u
        };
        k.eval(u).unwrap_or(f64::NAN)
    };
    let p1 = x.rem_euclid(1.0);
    let p2 = z.rem_euclid(1.0);
    let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
    let f = |s: f64, _: f64| eval(&kq, x - s) * eval(&kp, z - s);
    let tol = 1e-12;
    let total = if hi - lo < 1e-15 {
        tanh_sinh(f, lo, lo + 1.0, tol)
    } else {
        tanh_sinh(&f, lo, hi, tol) + tanh_sinh(&f, hi, lo + 1.0, tol)
    };
    if !total.is_finite() {
        return Err(crate::Error::DegenerateFit(format!(
            "quadrature diverged at x={x}, z={z}"
        )));
    }
    Ok(total)
}

fn reduce_dist(u: f64) -> f64 {
    let v = u.rem_euclid(1.0);
    v.min(1.0 - v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelCheckConfig {
    pub pairs: Vec<(f64, f64)>,
    pub points: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        Self {
            pairs: vec![(1.0, 1.0), (1.5, 2.5), (2.0, 2.0)],
            points: 20,
            tolerance: 1e-5,
            seed: 0,
        }
    }
}

/// Convolution identity `<Lambda_q(x,.), Lambda_q'(z,.)> = Lambda_{q+q'}(x - z)`
/// by quadrature at random `(x, z)`, plus symmetry and periodicity.
pub fn kernel_check(config: &KernelCheckConfig) -> Result<CheckReport> {
    let mut items = Vec::new();
    for (pi, &(q, qp)) in config.pairs.iter().enumerate() {
        let target = KernelEvaluator::exact(q + qp)?;
        let mut rng = rng_from_seed(derive_seed(config.seed, &[pi as u64]));
        let mut worst: f64 = 0.0;
        for _ in 0..config.points {
            let x: f64 = rng.random();
            let z: f64 = rng.random();
            let quad = convolution_quadrature(q, qp, x, z)?;
            worst = worst.max((quad - target.eval(x - z)?).abs());
        }
        items.push(CheckItem::new(
            format!("convolution q={q} q'={qp}"),
            worst,
            config.tolerance,
        ));
    }
    for &q in &[1.5, 2.5, 3.0, 3.5] {
        let k = KernelEvaluator::new(q)?;
        let mut rng = rng_from_seed(derive_seed(config.seed, &[1000, q.to_bits()]));
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let u: f64 = rng.random_range(0.001..0.999);
            let v = k.eval(u)?;
            worst = worst
                .max((v - k.eval(1.0 - u)?).abs())
                .max((v - k.eval(u + 1.0)?).abs());
        }
        items.push(CheckItem::new(format!("symmetry/periodicity q={q}"), worst, 1e-9));
    }
    CheckReport::new("kernel-check", config, items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterCheckConfig {
    pub alpha: f64,
    pub r: f64,
    pub sigma: f64,
    /// Overrides `1 / (4 R^2)`.
    pub gamma: Option<f64>,
    pub filter_ts: Vec<usize>,
    pub grid_points: usize,
    pub equivalence_n: usize,
    pub equivalence_ts: Vec<usize>,
    pub equivalence_tolerance: f64,
    pub monotone_instances: usize,
    pub monotone_n_max: usize,
    pub monotone_steps: usize,
    pub degenerate_steps: usize,
    pub seed: u64,
}

impl Default for FilterCheckConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            r: 0.25,
            sigma: 0.2,
            gamma: None,
            filter_ts: vec![2, 10, 100, 1000],
            grid_points: 2000,
            equivalence_n: 32,
            equivalence_ts: vec![10, 100, 1000],
            equivalence_tolerance: 1e-8,
            monotone_instances: 20,
            monotone_n_max: 64,
            monotone_steps: 200,
            degenerate_steps: 1000,
            seed: 0,
        }
    }
}

/// Largest increase of a sequence relative to its first element.
pub fn max_relative_increase(seq: &[f64]) -> f64 {
    let scale = seq.first().copied().unwrap_or(1.0).abs().max(f64::MIN_POSITIVE);
    seq.windows(2)
        .map(|w| (w[1] - w[0]) / scale)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest gap between SGD and batch GD on a one-point dataset, over raw
/// iterates and over averages (`thetabar_u = (u + 1) / u * bbar_{u+1}`).
pub fn single_point_gap(
    problem: &SyntheticProblem,
    gamma: f64,
    steps: usize,
    scheme: SamplingScheme,
    seed: u64,
) -> Result<f64> {
    let d = problem.sample_dataset(1, seed)?;
    let g = problem.kernel().gram(&d.xs)?;
    let batch = run_batch_gd(&d.ys, &g, gamma, steps + 1)?;
    let mut engine = SgdEngine::new(&g, &d.ys, gamma, scheme, derive_seed(seed, &[1]))?;
    let mut worst: f64 = 0.0;
    for u in 1..=steps {
        engine.step();
        let scale = batch.iterates[u][0].abs().max(1.0);
        worst = worst.max((engine.coeffs()[0] - batch.iterates[u][0]).abs() / scale);
        let avg = batch.averages[u][0] * (u as f64 + 1.0) / u as f64;
        worst = worst.max((engine.averaged()[0] - avg).abs() / scale);
    }
    Ok(worst)
}

/// Filter inequalities, iterative/spectral equivalence, batch monotonicity,
/// and the one-point SGD/batch coincidence.
pub fn filter_check(config: &FilterCheckConfig) -> Result<CheckReport> {
    let spec = ProblemSpec::new(config.alpha, config.r, config.sigma)?;
    let problem = SyntheticProblem::new(spec)?;
    let gamma = config.gamma.unwrap_or_else(|| spec.default_gamma());
    let mut items = Vec::new();

    let x_max = 4.0 * spec.r_squared();
    for &t in &config.filter_ts {
        let c = check_filter(gamma, t.max(2), 1e-8, x_max, config.grid_points, 1.0);
        let worst = c
            .max_remainder_ratio
            .iter()
            .map(|&(_, m)| m)
            .fold(c.max_lambda_q, f64::max);
        items.push(CheckItem::new(format!("filter inequalities t={t}"), worst, 1.0 + 1e-12));
    }

    let d = problem.sample_dataset(config.equivalence_n, derive_seed(config.seed, &[1]))?;
    let g = problem.kernel().gram(&d.xs)?;
    for &t in &config.equivalence_ts {
        let it = run_batch_gd(&d.ys, &g, gamma, t)?;
        let sp = spectral_solution(&g, &d.ys, gamma, t)?;
        let it = DVector::from_column_slice(it.final_average());
        let sp = DVector::from_vec(sp);
        let rel = (&it - &sp).amax() / sp.amax().max(f64::MIN_POSITIVE);
        items.push(CheckItem::new(
            format!("iterative vs spectral n={} t={t}", config.equivalence_n),
            rel,
            config.equivalence_tolerance,
        ));
    }

    let mut rng = rng_from_seed(derive_seed(config.seed, &[2]));
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut worst_step_ratio: f64 = 0.0;
    for i in 0..config.monotone_instances {
        let n = rng.random_range(2..=config.monotone_n_max.max(2));
        let d = problem.sample_dataset(n, derive_seed(config.seed, &[3, i as u64]))?;
        let g = problem.kernel().gram(&d.xs)?;
        worst_step_ratio = worst_step_ratio.max(gamma * lambda_max_normalized(&g));
        let traj = run_batch_gd(&d.ys, &g, gamma, config.monotone_steps)?;
        worst = worst.max(max_relative_increase(&traj.training_mse));
    }
    items.push(CheckItem::new(
        format!(
            "batch training mse non-increasing ({} instances)",
            config.monotone_instances
        ),
        worst,
        1e-12,
    ));
    items.push(CheckItem::new("gamma * lambda_max(K/n)", worst_step_ratio, 1.0 + 1e-12));

    for scheme in [
        SamplingScheme::WithReplacement,
        SamplingScheme::WithoutReplacement,
        SamplingScheme::Cycle,
    ] {
        let gap = single_point_gap(
            &problem,
            gamma,
            config.degenerate_steps,
            scheme,
            derive_seed(config.seed, &[4]),
        )?;
        items.push(CheckItem::new(
            format!("n=1 sgd vs batch ({})", scheme.name()),
            gap,
            1e-12,
        ));
    }
    CheckReport::new("filter-check", config, items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiStochCheckConfig {
    pub dim: usize,
    pub alphas: Vec<f64>,
    pub ts: Vec<u64>,
    pub reps: usize,
    pub sigma: f64,
    pub closed_form_seeds: usize,
    pub closed_form_max_dim: usize,
    pub closed_form_max_t: usize,
    pub seed: u64,
}

impl Default for SemiStochCheckConfig {
    fn default() -> Self {
        Self {
            dim: 50,
            alphas: vec![2.0, 3.0],
            ts: vec![10, 100, 1000],
            reps: 1000,
            sigma: 1.0,
            closed_form_seeds: 50,
            closed_form_max_dim: 8,
            closed_form_max_t: 200,
            seed: 0,
        }
    }
}

/// Closed form against the recursion on random diagonal systems, then the
/// variance bound over `u in {0, 1/2, 1, 1 + 1/alpha}`.
pub fn semistoch_check(config: &SemiStochCheckConfig) -> Result<CheckReport> {
    let mut items = Vec::new();
    let mut worst: f64 = 0.0;
    for s in 0..config.closed_form_seeds {
        let mut rng = rng_from_seed(derive_seed(config.seed, &[0, s as u64]));
        let d = rng.random_range(1..=config.closed_form_max_dim.max(1));
        let t = rng.random_range(1..=config.closed_form_max_t.max(1));
        let alpha = rng.random_range(1.2..4.0);
        let system = SemiStochSystem::power_law(d, alpha, config.sigma)?;
        let noises = system.sample_noises(t, derive_seed(config.seed, &[1, s as u64]));
        let a = system.iterate_semi(&noises)?;
        let b = system.closed_form_avg(&noises)?;
        worst = worst.max((a - b).amax());
    }
    items.push(CheckItem::new(
        format!("closed form vs recursion ({} seeds)", config.closed_form_seeds),
        worst,
        1e-12,
    ));
    for &alpha in &config.alphas {
        let system = SemiStochSystem::power_law(config.dim, alpha, config.sigma)?;
        let us = [0.0, 0.5, 1.0, 1.0 + 1.0 / alpha];
        for &t in &config.ts {
            let seed = derive_seed(config.seed, &[2, alpha.to_bits(), t]);
            for c in system.variance_estimates(&us, t, config.reps, seed)? {
                let mut item = CheckItem::new(
                    format!("variance bound alpha={alpha} u={:.4} t={t}", c.u),
                    c.estimate,
                    c.bound,
                );
                item.pass = c.pass;
                items.push(item);
            }
        }
    }
    CheckReport::new("semistoch-check", config, items)
}
