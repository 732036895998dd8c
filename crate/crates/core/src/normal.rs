//! Standard normal distribution function and its inverse.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::erfc_inv;

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal quantile; returns the infinite endpoints at 0 and 1.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    // lower half only, so the Newton residual is relative to a small tail
    if p > 0.5 {
        return -quantile(1.0 - p);
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let density = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        if density == 0.0 {
            break;
        }
        x -= (cdf(x) - p) / density;
    }
    x
}
