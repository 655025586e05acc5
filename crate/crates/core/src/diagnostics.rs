//! Data-driven estimates of the spectral decay exponent `alpha` and the
//! source exponent `r`, plus the effective dimension.
//!
//! `alpha` is the negative slope of `log lambda_m` against `log m` over a
//! window of the spectrum. For `r`, the squared coefficients of the
//! estimator in the eigenbasis are fitted as `m^{-beta}`; the source
//! condition `sum_m lambda_m^{1-2r} <e_m, theta>^2 < inf` is then at its
//! threshold for `r = (alpha + beta - 1) / (2 alpha)`, clamped to `[0, 1]`.
//!
//! Eigenvalue index `m` is 1-based throughout: `eigs[0]` is `lambda_1`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::fit_line;

pub const MIN_WINDOW_POINTS: usize = 8;

/// `sum_m lambda_m / (lambda_m + lambda)`.
pub fn effective_dimension(eigs: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    Ok(eigs.iter().map(|&l| l.max(0.0) / (l.max(0.0) + lambda)).sum())
}

/// Default window `[3, len / 4]`, skipping the head and the noise floor.
pub fn default_window(len: usize) -> (usize, usize) {
    (3, len / 4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub alpha_hat: f64,
    /// 1-based inclusive `(m_lo, m_hi)`.
    pub window: (usize, usize),
    /// Coefficient of determination of the log-log regression.
    pub r_squared: f64,
}

fn log_log_fit(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, _) = fit_line(&xs, &ys)?;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    Ok((slope, r2))
}

fn check_window(len: usize, window: (usize, usize)) -> Result<()> {
    let (lo, hi) = window;
    if lo < 2 || hi > len || hi < lo || hi - lo + 1 < MIN_WINDOW_POINTS {
        return Err(Error::DegenerateFit(format!(
            "window [{lo}, {hi}] over {len} values: need 2 <= m_lo, m_hi <= {len} and at least {MIN_WINDOW_POINTS} points"
        )));
    }
    Ok(())
}

/// Fit `lambda_m ~ m^{-alpha}` on the window; `eigs` sorted descending.
pub fn fit_alpha(eigs: &[f64], window: (usize, usize)) -> Result<SpectrumFit> {
    check_window(eigs.len(), window)?;
    let pairs: Vec<(f64, f64)> = (window.0..=window.1).map(|m| (m as f64, eigs[m - 1])).collect();
    if pairs.iter().any(|&(_, l)| !(l > 0.0)) {
        return Err(Error::DegenerateFit("non-positive eigenvalue inside the window".into()));
    }
    let (slope, r_squared) = log_log_fit(&pairs)?;
    Ok(SpectrumFit {
        alpha_hat: -slope,
        window,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFit {
    pub r_hat: f64,
    /// Infinite when the coefficients vanish beyond the spectrum head.
    pub beta_hat: f64,
    pub alpha_hat: f64,
}

/// `clamp((alpha + beta - 1) / (2 alpha), 0, 1)`.
pub fn r_from_exponents(alpha: f64, beta: f64) -> f64 {
    if beta == f64::INFINITY {
        return 1.0;
    }
    ((alpha + beta - 1.0) / (2.0 * alpha)).clamp(0.0, 1.0)
}

/// Fit `<e_m, theta>^2 ~ m^{-beta}` on the window and invert the source
/// threshold. A target carried by the first `m_lo - 1` directions only is
/// finite-rank and gets `r_hat = 1`.
pub fn fit_r(eigs: &[f64], coefficients: &[f64], alpha_hat: f64, window: (usize, usize)) -> Result<SourceFit> {
    if eigs.len() != coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: eigs.len(),
            found: coefficients.len(),
        });
    }
    if !(alpha_hat > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha_hat must exceed 1, got {alpha_hat}"
        )));
    }
    check_window(eigs.len(), window)?;
    let sq: Vec<f64> = coefficients.iter().map(|c| c * c).collect();
    let top = sq.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Err(Error::DegenerateFit("all coefficients are zero".into()));
    }
    let floor = 1e-24 * top;
    if sq[window.0 - 1..].iter().all(|&c| c <= floor) {
        return Ok(SourceFit {
            r_hat: 1.0,
            beta_hat: f64::INFINITY,
            alpha_hat,
        });
    }
    let pairs: Vec<(f64, f64)> = (window.0..=window.1)
        .filter(|&m| sq[m - 1] > floor)
        .map(|m| (m as f64, sq[m - 1]))
        .collect();
    if pairs.len() < MIN_WINDOW_POINTS {
        return Err(Error::DegenerateFit(format!(
            "only {} nonzero coefficients inside the window",
            pairs.len()
        )));
    }
    let (slope, _) = log_log_fit(&pairs)?;
    let beta_hat = -slope;
    Ok(SourceFit {
        r_hat: r_from_exponents(alpha_hat, beta_hat),
        beta_hat,
        alpha_hat,
    })
}

/// Spectrum of the uncentered second moment and the minimum-norm least
/// squares solution expressed in its eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpectrum {
    /// Eigenvalues of `(1/n) X^T X`, descending.
    pub eigs: Vec<f64>,
    /// Matching eigenvectors as columns.
    pub basis: DMatrix<f64>,
    /// `<e_m, theta_hat>`.
    pub coefficients: Vec<f64>,
    pub theta: DVector<f64>,
    /// Eigenvalues at or below this are treated as zero by the pseudo-inverse.
    pub threshold: f64,
    pub rank: usize,
}

/// Eigendecompose `(1/n) X^T X` and solve least squares through its
/// pseudo-inverse. The cutoff is `max(n, d) * eps * lambda_max`.
pub fn ingest_features(x: &DMatrix<f64>, labels: &[f64]) -> Result<FeatureSpectrum> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(Error::MalformedInput("feature matrix is empty".into()));
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if x.iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::MalformedInput("non-finite value in input".into()));
    }
    let s = x.transpose() * x / n as f64;
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigs: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let basis = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);

    let threshold = n.max(d) as f64 * f64::EPSILON * eigs[0];
    let xty = x.transpose() * DVector::from_column_slice(labels) / n as f64;
    let proj = basis.transpose() * xty;
    let coefficients: Vec<f64> = eigs
        .iter()
        .zip(proj.iter())
        .map(|(&l, &p)| if l > threshold { p / l } else { 0.0 })
        .collect();
    let theta = &basis * DVector::from_column_slice(&coefficients);
    let rank = eigs.iter().filter(|&&l| l > threshold).count();
    Ok(FeatureSpectrum {
        eigs,
        basis,
        coefficients,
        theta,
        threshold,
        rank,
    })
}

fn parse_rows(path: &Path, delimiter: u8) -> Result<Vec<Vec<f64>>> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedInput(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // a non-numeric first line is a header
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::MalformedInput(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::MalformedInput(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Read a feature CSV. Without a label file the last column holds the labels.
pub fn load_features(
    features: impl AsRef<Path>,
    labels: Option<&Path>,
    delimiter: u8,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut rows = parse_rows(features.as_ref(), delimiter)?;
    let ys: Vec<f64> = match labels {
        Some(p) => {
            let lab = parse_rows(p, delimiter)?;
            if lab.iter().any(|r| r.len() != 1) {
                return Err(Error::MalformedInput("label file must have one column".into()));
            }
            lab.into_iter().map(|r| r[0]).collect()
        }
        None => {
            if rows[0].len() < 2 {
                return Err(Error::MalformedInput(
                    "need at least one feature column and a label column".into(),
                ));
            }
            rows.iter_mut().map(|r| r.pop().unwrap()).collect()
        }
    };
    if ys.len() != rows.len() {
        return Err(Error::MalformedInput(format!(
            "{} feature rows but {} labels",
            rows.len(),
            ys.len()
        )));
    }
    let d = rows[0].len();
    let x = DMatrix::from_row_iterator(rows.len(), d, rows.into_iter().flatten());
    Ok((x, ys))
}
