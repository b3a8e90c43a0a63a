//! Nearest-particle distance in an ideal gas.
//!
//! Particles start from a unit-intensity Poisson process on `R^d` and move
//! as independent Brownian motions, each coordinate having variance `t` at
//! time `t`. The process `X(t) = min_i ||U_i + W_i(t)||` is stationary and
//! min-i.d.; for the survival events `{X >= a}`,
//!
//! ```text
//! P[X(0) >= a] = exp(-V(a))
//! P[X(0) >= a, X(t) >= a] = exp(-2 V(a) + tau_a(t))
//! tau_a(t) = ∫_{B(a)} P[x + W(t) ∈ B(a)] dx <= V(a) P[W(t) ∈ B(2a)]
//! ```
//!
//! so `tau_a(t) -> 0` and the process is mixing. Simulation runs in the
//! finite box `[-L, L]^d` and reports a bound on what the truncation misses.

use crate::normal;
use crate::quadrature::{integrate, QuadratureError};
use crate::rng::replicate_rng;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};
use thiserror::Error;

/// Multiple of `sqrt(max t)` added to the radius for the default box half-width.
pub const EDGE_SIGMAS: f64 = 6.0;
/// Truncation bias above this fraction of the smallest positive estimate is flagged.
pub const BIAS_FLAG_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GasError {
    #[error("dimension {0} unsupported; expected 1, 2 or 3")]
    UnsupportedDimension(usize),
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("invalid gas config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

pub type Result<T> = std::result::Result<T, GasError>;

fn check(d: usize, a: f64) -> Result<()> {
    if !(1..=3).contains(&d) {
        return Err(GasError::UnsupportedDimension(d));
    }
    if !(a.is_finite() && a > 0.0) {
        return Err(GasError::InvalidRadius(a));
    }
    Ok(())
}

/// Volume `V(a)` of the ball of radius `a` in `R^d`.
pub fn ball_volume(d: usize, a: f64) -> Result<f64> {
    check(d, a)?;
    Ok(match d {
        1 => 2.0 * a,
        2 => PI * a * a,
        _ => 4.0 / 3.0 * PI * a * a * a,
    })
}

/// `P[X(0) >= a] = exp(-V(a))`.
pub fn survival_exact(d: usize, a: f64) -> Result<f64> {
    Ok((-ball_volume(d, a)?).exp())
}

/// Volume of the intersection of two radius-`a` balls at centre distance `r`.
fn lens_volume(d: usize, a: f64, r: f64) -> f64 {
    if r >= 2.0 * a {
        return 0.0;
    }
    match d {
        1 => 2.0 * a - r,
        2 => 2.0 * a * a * (r / (2.0 * a)).acos() - 0.5 * r * (4.0 * a * a - r * r).sqrt(),
        _ => PI * (4.0 * a + r) * (2.0 * a - r).powi(2) / 12.0,
    }
}

/// Density of the chi distribution with `d` degrees of freedom.
fn chi_pdf(d: usize, u: f64) -> f64 {
    let g = (-0.5 * u * u).exp();
    match d {
        1 => 2.0 * normal::pdf(u),
        2 => u * g,
        _ => (2.0 / PI).sqrt() * u * u * g,
    }
}

/// `P[chi_d < x]`.
fn chi_cdf(d: usize, x: f64) -> f64 {
    match d {
        1 => 1.0 - 2.0 * normal::tail(x),
        2 => -(-0.5 * x * x).exp_m1(),
        _ => libm::erf(x / SQRT_2) - FRAC_2_SQRT_PI / SQRT_2 * x * (-0.5 * x * x).exp(),
    }
}

/// `tau_a(t)`, computed as `E[lens(||W(t)||)]` since
/// `∫_{B(a)} 1{x + w ∈ B(a)} dx` is the lens volume at distance `||w||`.
pub fn tau_exact_integral(d: usize, a: f64, t: f64) -> Result<f64> {
    let v = ball_volume(d, a)?;
    if !(t >= 0.0) {
        return Err(GasError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(v);
    }
    let s = t.sqrt();
    if d == 1 {
        // E[(2a - |W|)^+] = 2 [2a (Phi(c) - 1/2) - s (phi(0) - phi(c))], c = 2a/s
        let c = 2.0 * a / s;
        let value = 2.0 * (2.0 * a * (0.5 - normal::tail(c)) - s * (normal::pdf(0.0) - normal::pdf(c)));
        return Ok(value.max(0.0));
    }
    let upper = (2.0 * a / s).min(40.0);
    let value = integrate(|u| lens_volume(d, a, s * u) * chi_pdf(d, u), 0.0, upper, 1e-11 * v, 1e-12)?;
    Ok(value.max(0.0))
}

/// `P[X(0) >= a, X(t) >= a] = exp(-2 V(a) + tau_a(t))`.
pub fn joint_survival_exact(d: usize, a: f64, t: f64) -> Result<f64> {
    let v = ball_volume(d, a)?;
    Ok((-2.0 * v + tau_exact_integral(d, a, t)?).exp())
}

/// `V(a) P[W(t) ∈ B(2a)]`, the upper bound on `tau_a(t)`.
pub fn hitting_bound(d: usize, a: f64, t: f64) -> Result<f64> {
    let v = ball_volume(d, a)?;
    if !(t >= 0.0) {
        return Err(GasError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(v);
    }
    Ok(v * chi_cdf(d, 2.0 * a / t.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasConfig {
    pub dim: usize,
    pub radius: f64,
    /// Box half-width `L`; defaults to `a + 6 sqrt(max t)`.
    #[serde(default)]
    pub half_width: Option<f64>,
    pub grid: Vec<f64>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GasConfig {
    pub fn new(dim: usize, radius: f64, grid: Vec<f64>, replicates: usize, seed: u64) -> Self {
        Self { dim, radius, half_width: None, grid, replicates, seed }
    }

    fn max_time(&self) -> f64 {
        self.grid.last().copied().unwrap_or(0.0)
    }

    /// Smallest admissible half-width, `a + 6 sqrt(max t)`.
    pub fn min_half_width(&self) -> f64 {
        self.radius + EDGE_SIGMAS * self.max_time().sqrt()
    }

    pub fn effective_half_width(&self) -> f64 {
        self.half_width.unwrap_or_else(|| self.min_half_width())
    }

    pub fn validate(&self) -> Result<()> {
        check(self.dim, self.radius)?;
        if self.grid.first() != Some(&0.0) {
            return Err(GasError::InvalidConfig("grid must start at 0".into()));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) || !self.max_time().is_finite() {
            return Err(GasError::InvalidConfig("grid must be finite and strictly increasing".into()));
        }
        if self.replicates == 0 {
            return Err(GasError::InvalidConfig("replicates must be at least 1".into()));
        }
        let l = self.effective_half_width();
        if !(l >= self.min_half_width()) {
            return Err(GasError::InvalidConfig(format!(
                "half_width {l} below a + 6 sqrt(max t) = {}",
                self.min_half_width()
            )));
        }
        Ok(())
    }
}

/// Estimate of `tau_a(t)` beside its exact value and bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GasRow {
    pub t: f64,
    pub joint_hat: f64,
    pub tau_hat: f64,
    pub se: f64,
    pub exact: f64,
    pub abs_diff: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GasFlag {
    /// An empirical probability at 0 or 1, so its logarithm or standard error degenerates.
    DegenerateProportion { t: f64, value: f64 },
    /// The truncation bias bound exceeds 10% of the smallest positive estimate.
    BiasTooLarge { bias_bound: f64, smallest_tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GasEstimate {
    pub dim: usize,
    pub radius: f64,
    pub half_width: f64,
    pub replicates: usize,
    pub survival_hat: f64,
    pub survival_se: f64,
    pub survival_exact: f64,
    pub survival_abs_diff: f64,
    pub rows: Vec<GasRow>,
    /// Bound on the probability that a particle from outside the box enters
    /// `B(a)` at some grid time.
    pub truncation_bias_bound: f64,
    pub mean_particles: f64,
    pub flags: Vec<GasFlag>,
}

impl GasEstimate {
    /// `tau_hat` does not increase by more than 3 combined standard errors
    /// between consecutive grid times.
    pub fn decreasing_within_noise(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].tau_hat <= w[0].tau_hat + 3.0 * (w[0].se * w[0].se + w[1].se * w[1].se).sqrt()
        })
    }
}

pub fn simulate_gas(cfg: &GasConfig) -> Result<GasEstimate> {
    cfg.validate()?;
    let d = cfg.dim;
    let a = cfg.radius;
    let l = cfg.effective_half_width();
    let m = cfg.grid.len();
    let steps: Vec<f64> = std::iter::once(0.0)
        .chain(cfg.grid.windows(2).map(|w| (w[1] - w[0]).sqrt()))
        .collect();
    let count_law = Poisson::new((2.0 * l).powi(d as i32))
        .map_err(|e| GasError::InvalidConfig(format!("particle count: {e}")))?;
    let a2 = a * a;

    let mut survive = vec![0usize; m];
    let mut joint = vec![0usize; m];
    let mut particles = 0u64;
    let mut min_norm2 = vec![0.0f64; m];
    let mut pos = [0.0f64; 3];
    for r in 0..cfg.replicates {
        let mut rng = replicate_rng(cfg.seed, r as u64);
        let n = count_law.sample(&mut rng) as u64;
        particles += n;
        min_norm2.fill(f64::INFINITY);
        for _ in 0..n {
            for x in pos[..d].iter_mut() {
                *x = rng.random_range(-l..l);
            }
            for (j, step) in steps.iter().enumerate() {
                if j > 0 {
                    for x in pos[..d].iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *x += step * z;
                    }
                }
                let n2: f64 = pos[..d].iter().map(|x| x * x).sum();
                min_norm2[j] = min_norm2[j].min(n2);
            }
        }
        let alive0 = min_norm2[0] >= a2;
        for j in 0..m {
            let alive = min_norm2[j] >= a2;
            survive[j] += alive as usize;
            joint[j] += (alive && alive0) as usize;
        }
    }

    let nf = cfg.replicates as f64;
    let v = ball_volume(d, a)?;
    let p0 = survive[0] as f64 / nf;
    let mut flags = Vec::new();
    let degenerate = |p: f64| p <= 0.0 || p >= 1.0;
    if degenerate(p0) {
        flags.push(GasFlag::DegenerateProportion { t: 0.0, value: p0 });
    }
    let exact_survival = survival_exact(d, a)?;
    let mut rows = Vec::with_capacity(m);
    for (j, &t) in cfg.grid.iter().enumerate() {
        let pj = joint[j] as f64 / nf;
        if j > 0 && degenerate(pj) {
            flags.push(GasFlag::DegenerateProportion { t, value: pj });
        }
        // delta method: with I_joint <= I_0 the covariance terms cancel the p0 variance
        let tau_hat = pj.ln() - 2.0 * p0.ln();
        let se = ((1.0 - pj) / (pj * nf)).sqrt();
        let exact = tau_exact_integral(d, a, t)?;
        rows.push(GasRow {
            t,
            joint_hat: pj,
            tau_hat,
            se,
            exact,
            abs_diff: (tau_hat - exact).abs(),
            bound: hitting_bound(d, a, t)?,
        });
    }
    let truncation_bias_bound: f64 = cfg
        .grid
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| v * 2.0 * d as f64 * normal::tail((l - a) / t.sqrt()))
        .sum();
    let smallest_tau = rows
        .iter()
        .map(|r| r.tau_hat)
        .filter(|&x| x > 0.0 && x.is_finite())
        .fold(f64::INFINITY, f64::min);
    if smallest_tau.is_finite() && truncation_bias_bound > BIAS_FLAG_FRACTION * smallest_tau {
        flags.push(GasFlag::BiasTooLarge { bias_bound: truncation_bias_bound, smallest_tau });
    }
    Ok(GasEstimate {
        dim: d,
        radius: a,
        half_width: l,
        replicates: cfg.replicates,
        survival_hat: p0,
        survival_se: (p0 * (1.0 - p0) / nf).sqrt(),
        survival_exact: exact_survival,
        survival_abs_diff: (p0 - exact_survival).abs(),
        rows,
        truncation_bias_bound,
        mean_particles: particles as f64 / nf,
        flags,
    })
}
