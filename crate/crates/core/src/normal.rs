//! Standard normal helpers tuned for tail accuracy.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Inverse of the standard normal CDF. Accurate in the lower tail.
#[inline]
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        -SQRT_2 * erfc_inv(2.0 * p)
    }
}

#[inline]
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// `φ(x) / (1 − Φ(x))`, the mean of N(0,1) truncated to `(x, ∞)`.
#[inline]
pub fn inverse_mills(x: f64) -> f64 {
    if x < 25.0 {
        (log_pdf(x) - cdf(-x).ln()).exp()
    } else {
        // continued fraction of the Mills ratio
        let mut t = x;
        for k in (1..=8).rev() {
            t = x + k as f64 / t;
        }
        t
    }
}

/// Probability of `(lo, hi)` under N(0,1) together with the inverse-CDF draw
/// at uniform `u` restricted to that interval.
///
/// Intervals lying mostly in the upper half are reflected so both CDF values
/// are computed on the side where they keep relative precision.
#[inline]
pub fn interval_draw(lo: f64, hi: f64, u: f64) -> (f64, f64) {
    if lo + hi > 0.0 {
        let (mass, z) = lower_side_draw(-hi, -lo, 1.0 - u);
        (mass, -z)
    } else {
        lower_side_draw(lo, hi, u)
    }
}

#[inline]
fn lower_side_draw(lo: f64, hi: f64, u: f64) -> (f64, f64) {
    let p_lo = cdf(lo);
    let p_hi = cdf(hi);
    let mass = p_hi - p_lo;
    // subnormal masses lose the draw to underflow; callers switch to the log scale
    if !(mass > 1e-290) {
        return (0.0, 0.5 * (lo.max(-1e300) + hi.min(1e300)));
    }
    let z = quantile(p_lo + u * mass).clamp(lo, hi);
    (mass, z)
}

/// `ln Φ(x)`, accurate far into the lower tail.
#[inline]
pub fn log_cdf(x: f64) -> f64 {
    if x > -30.0 {
        cdf(x).ln()
    } else {
        log_pdf(x) - inverse_mills(-x).ln()
    }
}

/// Log-scale version of [`interval_draw`] for intervals whose mass
/// underflows.
pub fn log_interval_draw(lo: f64, hi: f64, u: f64) -> (f64, f64) {
    if !(lo < hi) {
        return (f64::NEG_INFINITY, 0.5 * (lo + hi));
    }
    if lo + hi > 0.0 {
        let (lm, z) = log_interval_draw(-hi, -lo, 1.0 - u);
        return (lm, -z);
    }
    let (a, b) = (log_cdf(lo), log_cdf(hi));
    let r = (a - b).exp();
    let log_mass = b + (-r).ln_1p();
    let target = b + (r + u * (1.0 - r)).ln();
    // Newton on the concave ln Φ: the first step lands left of the root,
    // after which the iterates increase monotonically
    let mut z = if hi.is_finite() { hi } else { lo.max(-1e300) + 1.0 };
    for _ in 0..60 {
        let step = (log_cdf(z) - target) / inverse_mills(-z);
        z -= step;
        if step.abs() < 1e-12 * (1.0 + z.abs()) {
            break;
        }
    }
    (log_mass, z.clamp(lo, hi))
}

/// Probability of `(lo, hi)` under N(0,1).
#[inline]
pub fn interval_mass(lo: f64, hi: f64) -> f64 {
    if lo + hi > 0.0 {
        (cdf(-lo) - cdf(-hi)).max(0.0)
    } else {
        (cdf(hi) - cdf(lo)).max(0.0)
    }
}
