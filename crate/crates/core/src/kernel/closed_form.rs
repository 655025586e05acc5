use std::f64::consts::PI;

/// Orders with an elementary closed form.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ClosedForm {
    /// `-2 ln(2 sin(pi u))`.
    LogSine,
    /// `(-1)^{m+1} (2 pi)^{2m} B_{2m}(u) / (2m)!`.
    Bernoulli { m: u32 },
}

impl ClosedForm {
    pub(crate) fn for_order(q: f64) -> Option<Self> {
        if q == 1.0 {
            return Some(ClosedForm::LogSine);
        }
        if q.fract() == 0.0 && (2.0..=8.0).contains(&q) && (q as u32) % 2 == 0 {
            return Some(ClosedForm::Bernoulli { m: q as u32 / 2 });
        }
        None
    }

    /// `u` already reduced to `[0, 1/2]`.
    pub(crate) fn eval(&self, u: f64) -> f64 {
        match *self {
            ClosedForm::LogSine => -2.0 * (2.0 * (PI * u).sin()).ln(),
            ClosedForm::Bernoulli { m } => {
                let two_m = 2 * m;
                let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
                let fact: f64 = (1..=two_m).map(f64::from).product();
                sign * (2.0 * PI).powi(two_m as i32) * bernoulli_poly(two_m, u) / fact
            }
        }
    }
}

fn bernoulli_poly(degree: u32, u: f64) -> f64 {
    let u2 = u * u;
    match degree {
        2 => u2 - u + 1.0 / 6.0,
        4 => u2 * (u2 - 2.0 * u + 1.0) - 1.0 / 30.0,
        6 => {
            let u4 = u2 * u2;
            u4 * (u2 - 3.0 * u + 2.5) - 0.5 * u2 + 1.0 / 42.0
        }
        8 => {
            let u4 = u2 * u2;
            u4 * (u4 - 4.0 * u2 * u + 14.0 / 3.0 * u2 - 7.0 / 3.0) + 2.0 / 3.0 * u2 - 1.0 / 30.0
        }
        _ => unreachable!("closed forms exist for degrees 2, 4, 6, 8"),
    }
}
