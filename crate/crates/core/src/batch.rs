//! Averaged batch gradient descent and its spectral-filter form.
//!
//! In dual coordinates the batch recursion reads
//! `b_t = b_{t-1} + (gamma / n) (y - K b_{t-1})`, `b_0 = 0`, and its average
//! `bbar_t = (b_0 + ... + b_{t-1}) / t` has the closed form
//!
//! ```text
//! bbar_t = q(K / n) y / n,   q(x) = (1 - (1 - (1 - gamma x)^t) / (gamma t x)) / x
//! ```
//!
//! Note the average runs over `b_0..b_{t-1}` and includes the zero initial
//! iterate, while [`crate::sgd`] averages `theta_1..theta_u`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below `gamma t x < SERIES_SCALE` the filter is summed as a power series
/// in `gamma x`; the closed form cancels catastrophically there.
const SERIES_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTrajectory {
    /// `b_0, ..., b_t`.
    pub iterates: Vec<Vec<f64>>,
    /// `bbar_1, ..., bbar_t`.
    pub averages: Vec<Vec<f64>>,
    /// `(1/n) ||K b_s - y||^2` for `s = 0..=t`.
    pub training_mse: Vec<f64>,
    /// Whether `gamma * lambda_max(K / n) <= 1` held.
    pub step_size_ok: bool,
}

impl BatchTrajectory {
    pub fn final_average(&self) -> &[f64] {
        self.averages.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn check_dims(gram: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if gram.nrows() != y.len() || gram.ncols() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: gram.nrows(),
        });
    }
    Ok(())
}

fn mse(gram: &DMatrix<f64>, b: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (gram * b - y).norm_squared() / y.len() as f64
}

/// Largest eigenvalue of `K / n`.
pub fn lambda_max_normalized(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows().max(1) as f64;
    SymmetricEigen::new(gram.clone() / n)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Run `t` steps of batch GD from zero.
pub fn run_batch_gd(ys: &[f64], gram: &DMatrix<f64>, gamma: f64, t: usize) -> Result<BatchTrajectory> {
    check_dims(gram, ys)?;
    let n = ys.len();
    let y = DVector::from_column_slice(ys);
    let step_size_ok = gamma * lambda_max_normalized(gram) <= 1.0 + 1e-12;

    let mut b = DVector::zeros(n);
    let mut sum = DVector::zeros(n);
    let mut iterates = Vec::with_capacity(t + 1);
    let mut averages = Vec::with_capacity(t);
    let mut training_mse = Vec::with_capacity(t + 1);
    iterates.push(b.as_slice().to_vec());
    training_mse.push(mse(gram, &b, &y));
    for s in 1..=t {
        sum += &b;
        averages.push((&sum / s as f64).as_slice().to_vec());
        let residual = &y - gram * &b;
        b += residual * (gamma / n as f64);
        iterates.push(b.as_slice().to_vec());
        training_mse.push(mse(gram, &b, &y));
    }
    Ok(BatchTrajectory {
        iterates,
        averages,
        training_mse,
        step_size_ok,
    })
}

/// Filter of averaged batch GD after `t >= 2` steps, stable near `x = 0`.
pub fn q_eta(x: f64, gamma: f64, t: usize) -> f64 {
    let tf = t as f64;
    let gx = gamma * x;
    if (gx * tf).abs() < SERIES_SCALE {
        // q(x) = gamma sum_{j>=2} (-1)^j C(t, j) / t (gamma x)^{j-2}
        let mut term = (tf - 1.0) / 2.0;
        let mut sum = term;
        let mut j = 2.0;
        while j < tf && term != 0.0 {
            term *= -gx * (tf - j) / (j + 1.0);
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
            j += 1.0;
        }
        return gamma * sum;
    }
    let decay = (1.0 - gx).powf(tf);
    (1.0 - (1.0 - decay) / (gamma * tf * x)) / x
}

/// `1 - x q(x)`.
pub fn r_eta(x: f64, gamma: f64, t: usize) -> f64 {
    1.0 - x * q_eta(x, gamma, t)
}

/// Spectral form of `bbar_t`: eigendecompose `K / n = U D U^T` and return
/// `U q(D) U^T y / n`.
pub fn spectral_solution(gram: &DMatrix<f64>, ys: &[f64], gamma: f64, t: usize) -> Result<Vec<f64>> {
    check_dims(gram, ys)?;
    let n = ys.len() as f64;
    let eig = SymmetricEigen::try_new(gram.clone() / n, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let y = DVector::from_column_slice(ys);
    let mut proj = eig.eigenvectors.transpose() * y;
    for (p, &d) in proj.iter_mut().zip(eig.eigenvalues.iter()) {
        *p *= q_eta(d, gamma, t) / n;
    }
    Ok((&eig.eigenvectors * proj).as_slice().to_vec())
}

/// The two defining inequalities of a spectral filter, checked on a grid:
/// `lambda q(x) <= c` and `r(x) x^u <= c lambda^u` for `u in {0, 1/2, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCheck {
    pub lambda: f64,
    pub c_q: f64,
    pub max_lambda_q: f64,
    /// `max_x r(x) x^u / lambda^u` per `u`.
    pub max_remainder_ratio: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Check the filter inequalities for `q_eta` with `lambda = 1/(gamma t)` on
/// a log grid of `x` in `[x_min, x_max]`.
pub fn check_filter(gamma: f64, t: usize, x_min: f64, x_max: f64, points: usize, c_q: f64) -> FilterCheck {
    let lambda = 1.0 / (gamma * t as f64);
    let xs: Vec<f64> = (0..points)
        .map(|i| {
            let s = i as f64 / (points - 1).max(1) as f64;
            (x_min.ln() + s * (x_max.ln() - x_min.ln())).exp()
        })
        .collect();
    let max_lambda_q = xs
        .iter()
        .map(|&x| lambda * q_eta(x, gamma, t))
        .fold(f64::NEG_INFINITY, f64::max);
    let max_remainder_ratio: Vec<(f64, f64)> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&u| {
            let m = xs
                .iter()
                .map(|&x| r_eta(x, gamma, t) * x.powf(u) / lambda.powf(u))
                .fold(f64::NEG_INFINITY, f64::max);
            (u, m)
        })
        .collect();
    let slack = 1e-12;
    let pass = max_lambda_q <= c_q + slack && max_remainder_ratio.iter().all(|&(_, m)| m <= c_q + slack);
    FilterCheck {
        lambda,
        c_q,
        max_lambda_q,
        max_remainder_ratio,
        pass,
    }
}
