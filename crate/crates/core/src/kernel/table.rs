use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::series::LocalExpansion;
use crate::error::{Error, Result};

/// Target for the truncation tail outside the expansion cutoff.
const TAIL_TARGET: f64 = 1e-9;
const MIN_CUTOFF: f64 = 1.0 / 1024.0;

/// Truncated series sampled on `j / N`, `j = 0..=N/2`, with linear
/// interpolation in between and the local expansion below `cutoff`.
#[derive(Debug, Clone)]
pub(crate) struct Table {
    order: f64,
    truncation: usize,
    grid_size: usize,
    values: Vec<f64>,
    cutoff: f64,
    expansion: LocalExpansion,
    interpolation_bound: f64,
}

impl Table {
    pub(crate) fn build(order: f64, grid_size: usize, truncation: usize) -> Result<Self> {
        if grid_size < 8 || !grid_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "tabulation grid size must be a power of two >= 8, got {grid_size}"
            )));
        }
        if truncation == 0 {
            return Err(Error::InvalidConfig("truncation must be positive".into()));
        }

        // Fold c_k (k = +-1..+-K) modulo N: exact for the truncated series at grid points.
        let mut folded = vec![Complex::new(0.0, 0.0); grid_size];
        for k in 1..=truncation {
            let w = (k as f64).powf(-order);
            let j = k % grid_size;
            folded[j].re += w;
            folded[(grid_size - j) % grid_size].re += w;
        }
        FftPlanner::new().plan_fft_forward(grid_size).process(&mut folded);
        let half = grid_size / 2;
        let values: Vec<f64> = folded[..=half].iter().map(|c| c.re).collect();

        let tail = 2.0 * ((truncation + 1) as f64).powf(-order);
        let cutoff = if tail / TAIL_TARGET >= 1.0 {
            0.5
        } else {
            ((tail / TAIL_TARGET).asin() / PI).max(MIN_CUTOFF)
        };

        let first = ((cutoff * grid_size as f64).floor() as usize).max(1);
        let interpolation_bound = (first..half)
            .map(|j| (values[j + 1] - 2.0 * values[j] + values[j - 1]).abs() / 8.0)
            .fold(0.0, f64::max);

        Ok(Self {
            order,
            truncation,
            grid_size,
            values,
            cutoff,
            expansion: LocalExpansion::new(order),
            interpolation_bound,
        })
    }

    /// `u` reduced to `[0, 1/2]`.
    pub(crate) fn eval(&self, u: f64) -> f64 {
        if u < self.cutoff {
            return self.expansion.eval(u);
        }
        let pos = u * self.grid_size as f64;
        let j = (pos.floor() as usize).min(self.grid_size / 2 - 1);
        let frac = pos - j as f64;
        self.values[j] + frac * (self.values[j + 1] - self.values[j])
    }

    pub(crate) fn tail_bound(&self, u: f64) -> f64 {
        if u < self.cutoff {
            0.0
        } else {
            2.0 * ((self.truncation + 1) as f64).powf(-self.order) / (PI * u).sin()
        }
    }

    pub(crate) fn error_bound(&self) -> f64 {
        let tail = if self.cutoff >= 0.5 {
            0.0
        } else {
            self.tail_bound(self.cutoff)
        };
        tail + self.interpolation_bound + 1e-12
    }
}
