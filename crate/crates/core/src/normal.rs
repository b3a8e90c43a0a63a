//! Standard Gaussian density, distribution function and upper tail.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Density of the standard normal law.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Upper tail `P[Z > z]`, computed through `erfc` so it keeps full relative
/// accuracy far into the right tail.
pub fn tail(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// `P[Z <= z]`.
pub fn cdf(z: f64) -> f64 {
    tail(-z)
}
