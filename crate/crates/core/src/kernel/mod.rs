//! Periodic spline kernels on `[0, 1]`.
//!
//! The kernel of order `q` is the translation-invariant function
//!
//! ```text
//! Lambda_q(u) = sum_{k != 0} exp(2 i pi k u) / |k|^q = 2 sum_{k >= 1} cos(2 pi k u) / k^q
//! ```
//!
//! It is 1-periodic and even, finite at the origin (equal to `2 zeta(q)`)
//! when `q > 1`, and positive definite for `q > 1`. Two kernels compose
//! under the uniform measure: `<Lambda_q(x, .), Lambda_q'(z, .)>_{L2} =
//! Lambda_{q+q'}(x - z)`, which is what makes the excess risk of a dual
//! model computable in closed form.
//!
//! Four evaluation strategies are available:
//!
//! - [`Strategy::ClosedForm`] for `q = 1` (log-sine) and even integers up
//!   to 8 (Bernoulli polynomials).
//! - [`Strategy::Tabulated`]: the truncated series folded onto a uniform
//!   grid and summed with one FFT, then linearly interpolated. Cells near
//!   the origin, where the truncation tail and the interpolation error both
//!   blow up, are evaluated with the local expansion instead.
//! - [`Strategy::Direct`]: plain truncated summation. Slow, used as a
//!   reference for the table.
//! - [`Strategy::Series`]: the local polylogarithm expansion on the whole
//!   half period. Exact to round-off and cheap to construct.

mod closed_form;
mod direct;
mod series;
mod table;
mod zeta;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use zeta::zeta;

use direct::DirectSum;
use series::LocalExpansion;
use table::Table;

/// Default tabulation grid size.
pub const DEFAULT_GRID_SIZE: usize = 1 << 20;
/// Default truncation of the Fourier series behind the table.
pub const DEFAULT_TRUNCATION: usize = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    ClosedForm,
    Tabulated { grid_size: usize, truncation: usize },
    Direct { truncation: usize },
    Series,
}

impl Strategy {
    pub fn default_tabulated() -> Self {
        Strategy::Tabulated {
            grid_size: DEFAULT_GRID_SIZE,
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Closed(closed_form::ClosedForm),
    Table(Table),
    Direct(DirectSum),
    Series(LocalExpansion),
}

/// Evaluator for `Lambda_q`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    order: f64,
    strategy: Strategy,
    backend: Backend,
}

impl KernelEvaluator {
    /// Closed form when one exists, otherwise the default table.
    pub fn new(order: f64) -> Result<Self> {
        let strategy = if closed_form::ClosedForm::for_order(order).is_some() {
            Strategy::ClosedForm
        } else {
            Strategy::default_tabulated()
        };
        Self::with_strategy(order, strategy)
    }

    /// Closed form when one exists, otherwise the series expansion.
    /// Cheap to build, for one-off evaluations.
    pub fn exact(order: f64) -> Result<Self> {
        let strategy = if closed_form::ClosedForm::for_order(order).is_some() {
            Strategy::ClosedForm
        } else {
            Strategy::Series
        };
        Self::with_strategy(order, strategy)
    }

    pub fn with_strategy(order: f64, strategy: Strategy) -> Result<Self> {
        if !(order > 0.0) || !order.is_finite() {
            return Err(Error::InvalidOrder {
                q: order,
                reason: "kernel order must be positive",
            });
        }
        let backend = match strategy {
            Strategy::ClosedForm => {
                Backend::Closed(closed_form::ClosedForm::for_order(order).ok_or(Error::InvalidOrder {
                    q: order,
                    reason: "no closed form (only q = 1 and even q <= 8)",
                })?)
            }
            Strategy::Tabulated { grid_size, truncation } => {
                Backend::Table(Table::build(order, grid_size, truncation)?)
            }
            Strategy::Direct { truncation } => Backend::Direct(DirectSum::new(order, truncation)?),
            Strategy::Series => Backend::Series(LocalExpansion::new(order)),
        };
        Ok(Self {
            order,
            strategy,
            backend,
        })
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Evaluate `Lambda_q(u)` for any finite `u`.
    pub fn eval(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite kernel argument {u}")));
        }
        let v = reduce(u);
        if self.order <= 1.0 && v < f64::EPSILON {
            return Err(Error::DivergentPoint { q: self.order, u });
        }
        Ok(self.eval_reduced(v))
    }

    /// Evaluation on an argument already reduced to `[0, 1/2]`.
    fn eval_reduced(&self, v: f64) -> f64 {
        match &self.backend {
            Backend::Closed(c) => c.eval(v),
            Backend::Table(t) => t.eval(v),
            Backend::Direct(d) => d.eval(v),
            Backend::Series(s) => s.eval(v),
        }
    }

    /// Worst-case absolute error versus the full series, away from the
    /// origin for orders `q <= 1`.
    pub fn error_bound(&self) -> f64 {
        match &self.backend {
            Backend::Closed(_) => 1e-13,
            Backend::Series(_) => 1e-12,
            Backend::Table(t) => t.error_bound(),
            Backend::Direct(d) => d.tail_bound(0.5),
        }
    }

    /// Truncation tail bound at `u`; zero for untruncated strategies.
    pub fn tail_bound(&self, u: f64) -> f64 {
        let v = reduce(u);
        match &self.backend {
            Backend::Direct(d) => d.tail_bound(v),
            Backend::Table(t) => t.tail_bound(v),
            _ => 0.0,
        }
    }

    /// Gram matrix `K[i][j] = Lambda_q(x_i - x_j)`.
    pub fn gram(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        self.cross_gram(xs, xs)
    }

    /// Rectangular kernel matrix `K[i][j] = Lambda_q(x_i - z_j)`.
    pub fn cross_gram(&self, xs: &[f64], zs: &[f64]) -> Result<DMatrix<f64>> {
        if !(self.order > 1.0) {
            return Err(Error::InvalidOrder {
                q: self.order,
                reason: "Gram matrices require q > 1",
            });
        }
        if let Some(bad) = xs.iter().chain(zs).find(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite input point {bad}")));
        }
        let n = xs.len();
        let m = zs.len();
        let symmetric = std::ptr::eq(xs, zs);
        // Column-major storage: column j holds Lambda(x_i - z_j) for all i.
        let columns: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|j| {
                let start = if symmetric { j } else { 0 };
                let mut col = vec![0.0; n];
                for i in start..n {
                    col[i] = self.eval_reduced(reduce(xs[i] - zs[j]));
                }
                col
            })
            .collect();
        let mut k = DMatrix::from_fn(n, m, |i, j| columns[j][i]);
        if symmetric {
            for j in 0..m {
                for i in 0..j {
                    k[(i, j)] = k[(j, i)];
                }
            }
        }
        Ok(k)
    }
}

/// Reduce `u` to `[0, 1/2]` using periodicity and symmetry.
pub(crate) fn reduce(u: f64) -> f64 {
    let r = u.rem_euclid(1.0);
    if r > 0.5 {
        1.0 - r
    } else {
        r
    }
}

/// `Lambda_q(u)` through the given evaluator.
pub fn lambda_eval(evaluator: &KernelEvaluator, u: f64) -> Result<f64> {
    evaluator.eval(u)
}

/// Gram matrix of `xs` under the evaluator's kernel.
pub fn gram_matrix(evaluator: &KernelEvaluator, xs: &[f64]) -> Result<DMatrix<f64>> {
    evaluator.gram(xs)
}

/// `<Lambda_q(x, .), Lambda_q'(z, .)>_{L2(uniform)} = Lambda_{q+q'}(x - z)`.
pub fn l2_inner(q: f64, q_prime: f64, x: f64, z: f64) -> Result<f64> {
    let order = q + q_prime;
    if !(order > 1.0) {
        return Err(Error::InvalidOrder {
            q: order,
            reason: "L2 inner product requires q + q' > 1",
        });
    }
    KernelEvaluator::exact(order)?.eval(x - z)
}
