//! Local expansion of the spline kernel around the origin.
//!
//! Writing theta = 2 pi u, the kernel is twice the real part of the
//! polylogarithm Li_q(e^{i theta}), whose expansion around theta = 0 is
//!
//! ```text
//! Li_q(e^mu) = Gamma(1-q) (-mu)^{q-1} + sum_k zeta(q-k) mu^k / k!      (q not a positive integer)
//! Li_m(e^mu) = mu^{m-1}/(m-1)! [H_{m-1} - ln(-mu)] + sum_{k != m-1} zeta(m-k) mu^k / k!
//! ```
//!
//! for |mu| < 2 pi. Only even powers survive in the real part, so the kernel
//! is a singular term plus a power series in theta^2 that converges
//! geometrically (ratio (theta / 2 pi)^2 <= 1/4 on theta in [0, pi]).

use std::f64::consts::PI;

use super::zeta::{sin_half_pi, zeta_real};

const MAX_TERMS: usize = 80;
const ODD_SNAP: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Leading {
    /// `coef * theta^(q-1)`.
    Power { coef: f64 },
    /// `(-1)^m theta^{2m} / (2m)! * (H_{2m} - ln theta)` for q = 2m + 1.
    Log { m: usize, scale: f64, harmonic: f64 },
}

#[derive(Debug, Clone)]
pub(crate) struct LocalExpansion {
    order: f64,
    leading: Leading,
    /// Coefficient of theta^{2j}: (-1)^j zeta(q - 2j) / (2j)!.
    coeffs: Vec<f64>,
}

impl LocalExpansion {
    pub(crate) fn new(order: f64) -> Self {
        let nearest = order.round();
        let odd = nearest >= 1.0 && (nearest as i64) % 2 == 1 && (order - nearest).abs() < ODD_SNAP;
        let q = if odd { nearest } else { order };
        let skip = odd.then(|| ((nearest as usize) - 1) / 2);

        let coeffs = (0..MAX_TERMS)
            .map(|j| {
                if Some(j) == skip {
                    0.0
                } else {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * zeta_over_factorial(q, j)
                }
            })
            .collect();

        let leading = match skip {
            Some(m) => {
                let fact: f64 = (1..=2 * m).map(|k| k as f64).product();
                let harmonic: f64 = (1..=2 * m).map(|k| 1.0 / k as f64).sum();
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                Leading::Log {
                    m,
                    scale: sign / fact,
                    harmonic,
                }
            }
            None => {
                // Gamma(1-q) cos(pi (q-1) / 2) = pi / (2 cos(pi q / 2) Gamma(q))
                let coef = PI / (2.0 * (0.5 * PI * q).cos() * libm::tgamma(q));
                Leading::Power { coef }
            }
        };

        Self { order, leading, coeffs }
    }

    /// Kernel value at `u`, reduced to `[0, 1/2]` by symmetry. Returns an
    /// infinite value at the origin when the series diverges there.
    pub(crate) fn eval(&self, u: f64) -> f64 {
        let theta = 2.0 * PI * u;
        let t2 = theta * theta;
        let mut acc = 0.0;
        let mut pow = 1.0;
        for (j, c) in self.coeffs.iter().enumerate() {
            let term = c * pow;
            acc += term;
            if j > 2 && term.abs() < 1e-18 * (1.0 + acc.abs()) && pow < 1e-3 {
                break;
            }
            pow *= t2;
            if pow == 0.0 {
                break;
            }
        }
        let lead = match self.leading {
            Leading::Power { coef } => {
                if theta == 0.0 {
                    if self.order > 1.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    coef * theta.powf(self.order - 1.0)
                }
            }
            Leading::Log { m, scale, harmonic } => {
                if theta == 0.0 {
                    if m == 0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    scale * theta.powi(2 * m as i32) * (harmonic - theta.ln())
                }
            }
        };
        2.0 * (lead + acc)
    }
}

/// zeta(q - 2j) / (2j)!, computed in log space once the argument is negative.
fn zeta_over_factorial(q: f64, j: usize) -> f64 {
    let s = q - 2.0 * j as f64;
    let two_j = 2.0 * j as f64;
    if s >= 0.0 {
        let fact = libm::tgamma(two_j + 1.0);
        zeta_real(s) / fact
    } else {
        let sin = sin_half_pi(s);
        if sin == 0.0 {
            return 0.0;
        }
        let log_mag = s * 2f64.ln() + (s - 1.0) * PI.ln() + libm::lgamma(1.0 - s) - libm::lgamma(two_j + 1.0);
        sin * log_mag.exp() * zeta_real(1.0 - s)
    }
}
