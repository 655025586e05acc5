use std::f64::consts::PI;

use super::zeta::zeta;
use crate::error::{Error, Result};

/// Phase is recomputed exactly every this many terms to bound the drift of
/// the rotation recurrence.
const RESEED: usize = 1024;

/// Truncated series `2 sum_{k=1}^{K} cos(2 pi k u) / k^q`.
///
/// Holds the `K` coefficients in memory (8 bytes each).
#[derive(Debug, Clone)]
pub(crate) struct DirectSum {
    order: f64,
    coeffs: Vec<f64>,
    /// `2 zeta(q)` for `q > 1`; used at the origin.
    at_origin: Option<f64>,
}

impl DirectSum {
    pub(crate) fn new(order: f64, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::InvalidConfig("truncation must be positive".into()));
        }
        let coeffs = (1..=truncation).map(|k| (k as f64).powf(-order)).collect();
        let at_origin = if order > 1.0 { Some(2.0 * zeta(order)?) } else { None };
        Ok(Self {
            order,
            coeffs,
            at_origin,
        })
    }

    pub(crate) fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    /// `u` reduced to `[0, 1/2]`.
    pub(crate) fn eval(&self, u: f64) -> f64 {
        if u == 0.0 {
            return self.at_origin.unwrap_or(f64::INFINITY);
        }
        let mut acc = 0.0;
        for (block, chunk) in self.coeffs.chunks(RESEED).enumerate() {
            let first = (block * RESEED + 1) as f64;
            let (mut s, mut c) = (2.0 * PI * (first * u).fract()).sin_cos();
            let (ds, dc) = (2.0 * PI * u).sin_cos();
            for a in chunk {
                acc += a * c;
                let next_c = c * dc - s * ds;
                s = s * dc + c * ds;
                c = next_c;
            }
        }
        2.0 * acc
    }

    /// Summation-by-parts bound on the omitted tail at `u` in `(0, 1/2]`:
    /// `|2 sum_{k>K} cos(2 pi k u) / k^q| <= 2 (K+1)^{-q} / sin(pi u)`.
    pub(crate) fn tail_bound(&self, u: f64) -> f64 {
        if u == 0.0 {
            return if self.order > 1.0 { 0.0 } else { f64::INFINITY };
        }
        2.0 * ((self.truncation() + 1) as f64).powf(-self.order) / (PI * u).sin()
    }
}
