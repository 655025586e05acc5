//! Riemann zeta function on the real line.
//!
//! `zeta` covers the convergent range `q > 1`. The local expansion of the
//! spline kernel near the origin also needs zeta at arguments below one,
//! so `zeta_real` extends it to every real `s != 1` (Euler-Maclaurin for
//! `s >= 0`, the functional equation for `s < 0`).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// B_2, B_4, ..., B_20.
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

const EM_HEAD: usize = 16;

/// Riemann zeta for `q > 1`, absolute error below 1e-13.
pub fn zeta(q: f64) -> Result<f64> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::InvalidOrder {
            q,
            reason: "zeta requires q > 1",
        });
    }
    Ok(euler_maclaurin(q))
}

/// Analytic continuation of zeta to every real `s != 1`.
pub(crate) fn zeta_real(s: f64) -> f64 {
    debug_assert!(s != 1.0);
    if s >= 0.0 {
        euler_maclaurin(s)
    } else {
        // zeta(s) = 2^s pi^(s-1) sin(pi s / 2) Gamma(1 - s) zeta(1 - s)
        let one_minus = 1.0 - s;
        let sin = sin_half_pi(s);
        if sin == 0.0 {
            return 0.0;
        }
        let log_mag = s * 2f64.ln() + (s - 1.0) * PI.ln() + libm::lgamma(one_minus);
        sin * log_mag.exp() * euler_maclaurin(one_minus)
    }
}

/// sin(pi s / 2), exact zero at even integers.
pub(crate) fn sin_half_pi(s: f64) -> f64 {
    if s.fract() == 0.0 && (s as i64) % 2 == 0 {
        0.0
    } else {
        (0.5 * PI * s).sin()
    }
}

fn euler_maclaurin(s: f64) -> f64 {
    let n = EM_HEAD as f64;
    let mut sum: f64 = (1..EM_HEAD).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);

    // B_{2j}/(2j)! * s (s+1) ... (s+2j-2) * N^{-s-2j+1}
    let mut rising = s; // s (s+1) ... (s+2j-2)
    let mut factorial = 2.0; // (2j)!
    let mut power = n.powf(-s - 1.0);
    for (j, b) in BERNOULLI_EVEN.iter().enumerate() {
        let term = b / factorial * rising * power;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
        let k = 2.0 * (j as f64 + 1.0);
        rising *= (s + k - 1.0) * (s + k);
        factorial *= (k + 1.0) * (k + 2.0);
        power /= n * n;
    }
    sum
}
