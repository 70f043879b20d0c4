//! Standard normal distribution helpers.

use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Inverse of [`cdf`] on (0, 1); infinite at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // erfc_inv is only good to about 1e-12; one Newton step against the
    // more accurate erfc recovers full precision.
    let d = density(x);
    if d > 1e-300 {
        x - (cdf(x) - p) / d
    } else {
        x
    }
}

pub fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
