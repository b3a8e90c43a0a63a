//! Brown–Resnick processes on finite time grids.
//!
//! ```text
//! X(t) = max_i exp(U_i + W_i(t) - sigma^2(t)/2)
//! ```
//!
//! with `{U_i}` a Poisson process of intensity `e^{-x}` and `W_i` independent
//! copies of a centred Gaussian process with stationary increments, `W(0) = 0`
//! and variance `sigma^2(t)`. The process is stationary, max-stable and has
//! unit-Fréchet margins; its dependence is governed by the variogram.
//!
//! Besides simulation the module evaluates the closed-form extremal
//! dependence function and analyses the dyadic-cosine variogram, whose
//! process is ergodic but not mixing.

use crate::ergodic_diag::McEstimate;
use crate::normal;
use crate::rng::{replicate_rng, SimRng};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Default truncation margin of the point-stream stopping rule.
pub const DEFAULT_MARGIN: f64 = 12.0;
/// Default cap on Poisson points per replicate.
pub const DEFAULT_MAX_COUNT: usize = 10_000_000;
/// Target for the dyadic-cosine truncation error at the largest lag.
pub const DYADIC_TAIL_TOL: f64 = 1e-8;
/// Most negative eigenvalue of the grid covariance accepted as round-off.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrError {
    #[error("invalid variogram: {0}")]
    InvalidVariogram(String),
    #[error("variogram evaluated at negative lag {0}")]
    NegativeLag(f64),
    #[error("lag {t} outside tabulated range [0, {max}]")]
    OutOfTableRange { t: f64, max: f64 },
    #[error("grid covariance is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e} (tolerance {tolerance:e})")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("epsilon must lie in (0, 1/4), got {0}")]
    InvalidEpsilon(f64),
    #[error("grid step {step} too coarse: need at most {max_step} for 8 points per A_k interval")]
    GridTooCoarse { step: f64, max_step: f64 },
}

pub type Result<T> = std::result::Result<T, BrError>;

/// Variogram `sigma^2(t)` of the driving Gaussian process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariogramSpec {
    /// `theta * t^alpha`, the fractional Brownian motion variogram.
    Power { theta: f64, alpha: f64 },
    /// `sum_{k=1}^{order} (1 - cos(2 pi t / 2^k))`.
    DyadicCosine { order: u32 },
    /// Piecewise-linear interpolation of `(t, sigma^2)` points starting at `(0, 0)`.
    Table { points: Vec<(f64, f64)> },
}

/// A variogram value and the bound on what truncation left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariogramValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// `1 - cos(2 pi t / 2^k)`, reduced modulo the period first.
#[inline]
fn dyadic_term(t: f64, k: u32) -> f64 {
    let x = t * 0.5f64.powi(k as i32);
    let s = (PI * (x - x.floor())).sin();
    2.0 * s * s
}

/// Smallest order `K` with `(2 pi^2 / 3) t_max^2 4^{-K} <= tol`.
pub fn dyadic_order_for(t_max: f64, tol: f64) -> u32 {
    let c = 2.0 * PI * PI / 3.0 * t_max * t_max;
    let mut k = 1u32;
    while c * 0.25f64.powi(k as i32) > tol && k < 1000 {
        k += 1;
    }
    k
}

impl VariogramSpec {
    /// Dyadic-cosine variogram accurate to [`DYADIC_TAIL_TOL`] on `[0, t_max]`.
    pub fn dyadic_for_horizon(t_max: f64) -> Self {
        VariogramSpec::DyadicCosine { order: dyadic_order_for(t_max, DYADIC_TAIL_TOL) }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VariogramSpec::Power { theta, alpha } => {
                if !(theta.is_finite() && *theta > 0.0) {
                    return Err(BrError::InvalidVariogram(format!("theta must be positive, got {theta}")));
                }
                if !(*alpha > 0.0 && *alpha <= 2.0) {
                    return Err(BrError::InvalidVariogram(format!("alpha must lie in (0, 2], got {alpha}")));
                }
            }
            VariogramSpec::DyadicCosine { order } => {
                if *order == 0 {
                    return Err(BrError::InvalidVariogram("dyadic order must be at least 1".into()));
                }
            }
            VariogramSpec::Table { points } => {
                if points.first() != Some(&(0.0, 0.0)) {
                    return Err(BrError::InvalidVariogram("table must start at (0, 0)".into()));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(BrError::InvalidVariogram("table lags must increase strictly".into()));
                    }
                }
                if let Some(p) = points.iter().find(|p| !(p.0.is_finite() && p.1.is_finite() && p.1 >= 0.0)) {
                    return Err(BrError::InvalidVariogram(format!("bad table point ({}, {})", p.0, p.1)));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, t: f64) -> Result<VariogramValue> {
        if !(t >= 0.0) {
            return Err(BrError::NegativeLag(t));
        }
        let plain = |value| Ok(VariogramValue { value, tail_bound: 0.0 });
        match self {
            VariogramSpec::Power { theta, alpha } => plain(if t == 0.0 { 0.0 } else { theta * t.powf(*alpha) }),
            VariogramSpec::DyadicCosine { order } => {
                let value = (1..=*order).map(|k| dyadic_term(t, k)).sum();
                let tail_bound = 2.0 * PI * PI / 3.0 * t * t * 0.25f64.powi(*order as i32);
                Ok(VariogramValue { value, tail_bound })
            }
            VariogramSpec::Table { points } => {
                let max = points.last().map_or(0.0, |p| p.0);
                if t > max {
                    return Err(BrError::OutOfTableRange { t, max });
                }
                let i = points.partition_point(|p| p.0 <= t);
                if i == points.len() {
                    return plain(points[i - 1].1);
                }
                let (t0, v0) = points[i - 1];
                let (t1, v1) = points[i];
                plain(v0 + (v1 - v0) * (t - t0) / (t1 - t0))
            }
        }
    }

    /// `sigma^2(t)` without the truncation report.
    pub fn sigma2(&self, t: f64) -> Result<f64> {
        self.evaluate(t).map(|v| v.value)
    }
}

/// Extremal dependence `r(t)` as a function of the variogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RFormula {
    /// `Phi_bar(sigma / 2)`.
    SingleTail,
    /// `2 Phi_bar(sigma / 2)`, the variant with `r(0) = 1`.
    DoubleTail,
}

pub fn theoretical_r(spec: &VariogramSpec, t: f64, formula: RFormula) -> Result<f64> {
    let sigma = spec.sigma2(t)?.sqrt();
    let tail = normal::tail(sigma / 2.0);
    Ok(match formula {
        RFormula::SingleTail => tail,
        RFormula::DoubleTail => 2.0 * tail,
    })
}

/// Outcome of confronting both dependence formulas with estimates of `r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormulaSelection {
    pub selected: RFormula,
    pub chi2_single_tail: f64,
    pub chi2_double_tail: f64,
    pub max_abs_z_single_tail: f64,
    pub max_abs_z_double_tail: f64,
}

/// Picks the formula with the smaller chi-square `sum ((r_hat - r)/se)^2`
/// over `(t, r_hat)` estimates.
pub fn select_r_formula(spec: &VariogramSpec, estimates: &[(f64, McEstimate)]) -> Result<FormulaSelection> {
    let mut chi = [0.0f64; 2];
    let mut zmax = [0.0f64; 2];
    for (i, f) in [RFormula::SingleTail, RFormula::DoubleTail].into_iter().enumerate() {
        for (t, est) in estimates {
            let z = (est.value - theoretical_r(spec, *t, f)?) / est.se;
            chi[i] += z * z;
            zmax[i] = zmax[i].max(z.abs());
        }
    }
    Ok(FormulaSelection {
        selected: if chi[1] <= chi[0] { RFormula::DoubleTail } else { RFormula::SingleTail },
        chi2_single_tail: chi[0],
        chi2_double_tail: chi[1],
        max_abs_z_single_tail: zmax[0],
        max_abs_z_double_tail: zmax[1],
    })
}

/// How replicates realize the maximum over the Poisson points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    /// Points `U_i` in decreasing order with raw Gaussian paths, stopped once
    /// `U_i < min_t log X(t) - margin`.
    Truncated,
    /// Same points, each paired with a path recentred at a uniformly chosen
    /// grid point and divided by its grid average. Such spectral functions
    /// are bounded by the grid size `m`, so stopping at
    /// `U_i + log m < min_t log X(t)` loses nothing.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrSimConfig {
    pub grid: Vec<f64>,
    pub replicates: usize,
    pub margin: f64,
    pub max_count: usize,
    pub seed: u64,
    pub method: SimMethod,
}

impl BrSimConfig {
    pub fn new(grid: Vec<f64>, replicates: usize, seed: u64) -> Self {
        Self {
            grid,
            replicates,
            margin: DEFAULT_MARGIN,
            max_count: DEFAULT_MAX_COUNT,
            seed,
            method: SimMethod::Normalized,
        }
    }

    pub fn with_method(mut self, method: SimMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.first() != Some(&0.0) {
            return Err(BrError::InvalidConfig("grid must start at 0".into()));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) || self.grid.iter().any(|t| !t.is_finite()) {
            return Err(BrError::InvalidConfig("grid must be finite and strictly increasing".into()));
        }
        if self.replicates == 0 {
            return Err(BrError::InvalidConfig("replicates must be at least 1".into()));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(BrError::InvalidConfig(format!("margin must be positive, got {}", self.margin)));
        }
        if self.max_count == 0 {
            return Err(BrError::InvalidConfig("max_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws `W` on a grid with `W(grid[0]) = W(0) = 0` through a symmetric
/// square root of the covariance
/// `Gamma(s, t) = (sigma^2(s) + sigma^2(t) - sigma^2(|t - s|)) / 2`.
#[derive(Debug, Clone)]
pub struct GaussianPathSampler {
    /// Row `j` maps the standard normal vector to `W(grid[j + 1])`.
    factor: Vec<Vec<f64>>,
    rank: usize,
    grid_len: usize,
}

impl GaussianPathSampler {
    pub fn new(spec: &VariogramSpec, grid: &[f64]) -> Result<Self> {
        spec.validate()?;
        let inner = &grid[1.min(grid.len())..];
        let m = inner.len();
        if m == 0 {
            return Ok(Self { factor: Vec::new(), rank: 0, grid_len: grid.len() });
        }
        let var: Vec<f64> = inner.iter().map(|&t| spec.sigma2(t)).collect::<Result<_>>()?;
        let mut cov = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let c = 0.5 * (var[i] + var[j] - spec.sigma2((inner[i] - inner[j]).abs())?);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        let eig = SymmetricEigen::new(cov);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let tolerance = PSD_TOLERANCE * lmax.max(1.0);
        if lmin < -tolerance {
            return Err(BrError::NotPsd { min_eigenvalue: lmin, tolerance });
        }
        // directions at round-off level are dropped so degenerate covariances stay exactly degenerate
        let keep: Vec<usize> = (0..m).filter(|&k| eig.eigenvalues[k] > 1e-12 * lmax).collect();
        let factor = (0..m)
            .map(|i| {
                keep.iter()
                    .map(|&k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].sqrt())
                    .collect()
            })
            .collect();
        Ok(Self { factor, rank: keep.len(), grid_len: grid.len() })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Fills `out` (grid length) with one path.
    pub fn sample_into(&self, rng: &mut SimRng, z: &mut Vec<f64>, out: &mut [f64]) {
        z.clear();
        z.extend((0..self.rank).map(|_| -> f64 { StandardNormal.sample(rng) }));
        out[0] = 0.0;
        for (o, row) in out[1..].iter_mut().zip(&self.factor) {
            *o = row.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        }
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }
}

/// `cfg.replicates` independent Gaussian paths on `cfg.grid`.
pub fn gaussian_paths(spec: &VariogramSpec, cfg: &BrSimConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let sampler = GaussianPathSampler::new(spec, &cfg.grid)?;
    let mut z = Vec::new();
    Ok((0..cfg.replicates)
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed, r as u64);
            let mut path = vec![0.0; cfg.grid.len()];
            sampler.sample_into(&mut rng, &mut z, &mut path);
            path
        })
        .collect())
}

/// Points of a Poisson process with intensity `e^{-x}` in decreasing order:
/// `U_i = -log(E_1 + ... + E_i)` with standard exponential `E_j`.
pub struct GumbelPoints<'a> {
    rng: &'a mut SimRng,
    arrival: f64,
}

impl<'a> GumbelPoints<'a> {
    pub fn new(rng: &'a mut SimRng) -> Self {
        Self { rng, arrival: 0.0 }
    }
}

impl Iterator for GumbelPoints<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let e: f64 = Exp1.sample(self.rng);
        self.arrival += e;
        Some(-self.arrival.ln())
    }
}

/// The first `max_count` points of the stream for `seed`.
pub fn poisson_gumbel_points(max_count: usize, seed: u64) -> Vec<f64> {
    let mut rng = replicate_rng(seed, 0);
    GumbelPoints::new(&mut rng).take(max_count).collect()
}

/// Replicated Brown–Resnick paths with per-replicate diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrSample {
    pub grid: Vec<f64>,
    /// `paths[r][j] = X_r(grid[j])`.
    pub paths: Vec<Vec<f64>>,
    pub points_used: Vec<usize>,
    /// Replicates that hit `max_count` before the stopping rule fired.
    pub exhausted: Vec<bool>,
}

impl BrSample {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[j]).collect()
    }

    /// `(X(grid[i]), X(grid[j]))` over replicates.
    pub fn pairs(&self, i: usize, j: usize) -> Vec<(f64, f64)> {
        self.paths.iter().map(|p| (p[i], p[j])).collect()
    }

    pub fn exhausted_count(&self) -> usize {
        self.exhausted.iter().filter(|&&e| e).count()
    }

    pub fn mean_points(&self) -> f64 {
        self.points_used.iter().sum::<usize>() as f64 / self.points_used.len().max(1) as f64
    }
}

fn log_mean_exp(h: &[f64]) -> f64 {
    let hmax = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = h.iter().map(|v| (v - hmax).exp()).sum();
    hmax + (s / h.len() as f64).ln()
}

pub fn simulate_br_path(spec: &VariogramSpec, cfg: &BrSimConfig) -> Result<BrSample> {
    cfg.validate()?;
    let sampler = GaussianPathSampler::new(spec, &cfg.grid)?;
    let m = cfg.grid.len();
    let half_var: Vec<f64> = cfg
        .grid
        .iter()
        .map(|&t| spec.sigma2(t).map(|v| 0.5 * v))
        .collect::<Result<_>>()?;
    // half_lag[j][k] = sigma^2(|t_j - t_k|) / 2
    let half_lag: Vec<Vec<f64>> = cfg
        .grid
        .iter()
        .map(|&s| {
            cfg.grid
                .iter()
                .map(|&t| spec.sigma2((t - s).abs()).map(|v| 0.5 * v))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let ln_m = (m as f64).ln();

    let mut paths = Vec::with_capacity(cfg.replicates);
    let mut points_used = Vec::with_capacity(cfg.replicates);
    let mut exhausted = Vec::with_capacity(cfg.replicates);
    let mut w = vec![0.0; m];
    let mut h = vec![0.0; m];
    let mut z = Vec::new();
    for r in 0..cfg.replicates {
        let mut rng = replicate_rng(cfg.seed, r as u64);
        let mut arrival = 0.0f64;
        let mut log_max = vec![f64::NEG_INFINITY; m];
        let mut used = 0usize;
        let mut stopped = false;
        while used < cfg.max_count {
            let e: f64 = Exp1.sample(&mut rng);
            arrival += e;
            let u = -arrival.ln();
            let floor = log_max.iter().cloned().fold(f64::INFINITY, f64::min);
            let done = match cfg.method {
                SimMethod::Truncated => u < floor - cfg.margin,
                SimMethod::Normalized => u + ln_m < floor,
            };
            if done {
                stopped = true;
                break;
            }
            used += 1;
            sampler.sample_into(&mut rng, &mut z, &mut w);
            match cfg.method {
                SimMethod::Truncated => {
                    for j in 0..m {
                        log_max[j] = log_max[j].max(u + w[j] - half_var[j]);
                    }
                }
                SimMethod::Normalized => {
                    let centre = rng.random_range(0..m);
                    for j in 0..m {
                        h[j] = w[j] - w[centre] - half_lag[j][centre];
                    }
                    let norm = log_mean_exp(&h);
                    for j in 0..m {
                        log_max[j] = log_max[j].max(u + h[j] - norm);
                    }
                }
            }
        }
        paths.push(log_max.iter().map(|v| v.exp()).collect());
        points_used.push(used);
        exhausted.push(!stopped);
    }
    Ok(BrSample { grid: cfg.grid.clone(), paths, points_used, exhausted })
}

/// One dyadic block `[2^n, 2^{n+1}]` of the exceptional-set construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalSetRecord {
    pub n: u32,
    /// Grid-measured `lambda(D_{n,eps})`.
    pub measured: f64,
    /// `6 eps 2^n`.
    pub bound: f64,
    /// Discretization error bound for `measured`.
    pub resolution: f64,
    /// Grid Riemann sum of `S_n`.
    pub riemann_sum: f64,
    /// `(1 - 2 eps) 2^n n`.
    pub riemann_expected: f64,
    pub riemann_resolution: f64,
    /// Grid-measured `lambda(B_{k,n})` for `k = 1..=n`.
    pub b_measured: Vec<f64>,
    /// Exact `lambda(B_{k,n})`, from explicit interval intersections.
    pub b_exact: Vec<f64>,
    /// Grid resolution of each `b_measured` entry.
    pub b_resolution: Vec<f64>,
    /// Smallest `sigma^2(t)` over grid points outside `D_{n,eps}`.
    pub min_sigma2_off_d: f64,
    /// `(1/2) (1 - cos(2 pi eps)) n`.
    pub sigma2_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalSetReport {
    pub epsilon: f64,
    pub grid_step: f64,
    pub n_max: u32,
    pub dyadic_order: u32,
    /// `1 - cos(2 pi eps)`, the minimum of `1 - cos(2 pi x)` at distance `eps` from the integers.
    pub c_epsilon: f64,
    pub records: Vec<ExceptionalSetRecord>,
    /// `max_n lambda(D_eps ∩ [0, 2^{n+1}]) / 2^n`, which dominates
    /// `lambda(D_eps ∩ [0, t]) / t` for `t` in `[2^n, 2^{n+1}]`.
    pub density_estimate: f64,
    /// `12 eps`.
    pub density_bound: f64,
    /// `min sigma^2(t) / log t` over grid points off `D_eps` with `t > 2`.
    pub log_growth_constant: f64,
}

impl ExceptionalSetReport {
    /// Every proved inequality holds up to the reported grid resolution.
    pub fn all_bounds_hold(&self) -> bool {
        self.density_estimate <= self.density_bound
            && self.records.iter().all(|r| {
                r.measured <= r.bound + r.resolution && r.min_sigma2_off_d >= r.sigma2_floor
            })
    }
}

/// Distance from `x` to the nearest integer.
#[inline]
fn dist_to_integers(x: f64) -> f64 {
    let f = x - x.floor();
    f.min(1.0 - f)
}

/// `lambda([2^n, 2^{n+1}] \ A_k)` from the explicit intervals of `A_k`.
fn b_measure_exact(k: u32, n: u32, eps: f64) -> f64 {
    let lo = 2f64.powi(n as i32);
    let hi = 2.0 * lo;
    let p = 2f64.powi(k as i32);
    let first = (lo / p).floor() as i64 - 1;
    let last = (hi / p).ceil() as i64 + 1;
    let covered: f64 = (first..=last)
        .map(|i| {
            let a = ((i as f64 - eps) * p).max(lo);
            let b = ((i as f64 + eps) * p).min(hi);
            (b - a).max(0.0)
        })
        .sum();
    lo - covered
}

/// Grid analysis of the exceptional sets `D_{n,eps}` of the dyadic-cosine
/// variogram for `n = 1..=n_max`.
///
/// With `A_k = ∪_i [(i - eps) 2^k, (i + eps) 2^k]`, `B_{k,n} = [2^n, 2^{n+1}] \ A_k`,
/// `S_n = sum_{k<=n} 1_{B_{k,n}}` and `D_{n,eps} = {S_n < n/2}`, the function
/// measures `lambda(D_{n,eps})` on a midpoint grid, integrates `S_n`, and
/// evaluates `sigma^2` off `D_{n,eps}`.
pub fn exceptional_set_analysis(epsilon: f64, n_max: u32, grid_step: f64) -> Result<ExceptionalSetReport> {
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(BrError::InvalidEpsilon(epsilon));
    }
    if n_max == 0 || n_max > 24 {
        return Err(BrError::InvalidConfig(format!("n_max must lie in 1..=24, got {n_max}")));
    }
    // the shortest piece of any A_k inside a block is the half-interval of A_1, length 2 eps
    let max_step = 2.0 * epsilon / 8.0;
    if !(grid_step > 0.0 && grid_step <= max_step) {
        return Err(BrError::GridTooCoarse { step: grid_step, max_step });
    }
    let t_max = 2f64.powi(n_max as i32 + 1);
    let order = dyadic_order_for(t_max, DYADIC_TAIL_TOL);
    let c_epsilon = 1.0 - (2.0 * PI * epsilon).cos();

    let mut records = Vec::with_capacity(n_max as usize);
    let mut cumulative = 0.0;
    let mut density_estimate = 0.0f64;
    let mut log_growth_constant = f64::INFINITY;
    let mut d_k = vec![0.0f64; n_max as usize];
    for n in 1..=n_max {
        let lo = 2f64.powi(n as i32);
        let points = (lo / grid_step).ceil() as usize;
        let h = lo / points as f64;
        let nk = n as usize;
        let mut b_count = vec![0usize; nk];
        let mut d_count = 0usize;
        let mut s_total = 0usize;
        let mut min_sigma2 = f64::INFINITY;
        for j in 0..points {
            let t = lo + (j as f64 + 0.5) * h;
            let mut s = 0usize;
            let mut head = 0.0;
            for k in 1..=n {
                let d = dist_to_integers(t * 0.5f64.powi(k as i32));
                d_k[k as usize - 1] = d;
                if d > epsilon {
                    s += 1;
                    b_count[k as usize - 1] += 1;
                }
            }
            s_total += s;
            if 2 * s < nk {
                d_count += 1;
                continue;
            }
            for &d in &d_k[..nk] {
                let sn = (PI * d).sin();
                head += 2.0 * sn * sn;
            }
            let log_t = t.ln();
            // the remaining terms are nonnegative, so skip them when the head cannot improve either minimum
            if head >= min_sigma2 && head / log_t >= log_growth_constant {
                continue;
            }
            let full = head + ((n + 1)..=order).map(|k| dyadic_term(t, k)).sum::<f64>();
            min_sigma2 = min_sigma2.min(full);
            if t > 2.0 {
                log_growth_constant = log_growth_constant.min(full / log_t);
            }
        }
        let measured = d_count as f64 * h;
        // each endpoint of an A_k interval can misplace at most one grid cell
        let endpoints: Vec<f64> = (1..=n).map(|k| 2.0 * (lo / 2f64.powi(k as i32) + 1.0)).collect();
        let total_endpoints: f64 = endpoints.iter().sum();
        cumulative += measured;
        density_estimate = density_estimate.max(cumulative / lo);
        records.push(ExceptionalSetRecord {
            n,
            measured,
            bound: 6.0 * epsilon * lo,
            resolution: h * total_endpoints,
            riemann_sum: s_total as f64 * h,
            riemann_expected: (1.0 - 2.0 * epsilon) * lo * n as f64,
            riemann_resolution: h * total_endpoints,
            b_measured: b_count.iter().map(|&c| c as f64 * h).collect(),
            b_exact: (1..=n).map(|k| b_measure_exact(k, n, epsilon)).collect(),
            b_resolution: endpoints.iter().map(|e| e * h).collect(),
            min_sigma2_off_d: min_sigma2,
            sigma2_floor: 0.5 * c_epsilon * n as f64,
        });
    }
    Ok(ExceptionalSetReport {
        epsilon,
        grid_step,
        n_max,
        dyadic_order: order,
        c_epsilon,
        records,
        density_estimate,
        density_bound: 12.0 * epsilon,
        log_growth_constant,
    })
}
