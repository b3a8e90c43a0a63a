//! Sequence-level mixing and ergodicity diagnostics.
//!
//! A stationary max-i.d. process is mixing iff `tau_a(t) -> 0` and ergodic iff
//! the Cesàro means `(1/n) sum_{t<=n} tau_a(t) -> 0`, for every level `a`. On
//! a finite sequence both limits become threshold checks with a tri-state
//! verdict; see [`classify`].
//!
//! The module also carries the supporting machinery: the exponential Cesàro
//! sandwich used to pass between `tau` and `e^tau`, density-zero exception
//! sets, spectral (Bochner) sequences, and Monte-Carlo estimators of `tau_a`
//! and of the extremal dependence function `r(t)` from replicated pairs.

use crate::exponent_core::MovingMaximaModel;
use crate::rng::replicate_rng;
use crate::stats::compensated_sum;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io;
use thiserror::Error;

/// Minimum number of replicated pairs accepted by the estimators.
pub const MIN_REPLICATES: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("sequence value {value} at t={t} outside [0, {bound}]")]
    OutOfBounds { t: usize, value: f64, bound: f64 },
    #[error("bound must be finite and positive, got {0}")]
    InvalidBound(f64),
    #[error("r-sequences need a bound at most 1, got {0}")]
    RBoundAboveOne(f64),
    #[error("n={n} out of range 1..={len}")]
    OutOfRange { n: usize, len: usize },
    #[error("kappa must be positive, got {0}")]
    InvalidKappa(f64),
    #[error("{name} must be positive, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("sequence too short: {len} values, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("spectral measure is not symmetric about 0")]
    AsymmetricSpectral,
    #[error("spectral atom ({location}, {weight}) invalid: location must lie in [-pi, pi], weight must be positive")]
    InvalidSpectralAtom { location: f64, weight: f64 },
    #[error("too few replicates: got {got}, need {need}")]
    TooFewReplicates { got: usize, need: usize },
    #[error("empirical proportion {which} = {value} is degenerate; estimate undefined")]
    DegenerateProportion { which: &'static str, value: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DiagError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// `tau_a(t)` for some fixed level; values in `[0, C]`.
    Tau,
    /// Extremal dependence function `r(t)`; values in `[0, C]` with `C <= 1`.
    R,
    /// Fourier coefficients of a symmetric spectral measure; values may be
    /// negative, `|value| <= C`.
    Spectral,
}

/// Values at `t = 1..=n` together with a uniform bound `C`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceSequence {
    values: Vec<f64>,
    bound: f64,
    kind: SequenceKind,
}

// Floating sums over subsets may overshoot the bound by a few ulps.
fn bound_slack(bound: f64) -> f64 {
    1e-12 * bound.max(1.0)
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    t: usize,
    value: f64,
}

impl DependenceSequence {
    pub fn new(values: Vec<f64>, bound: f64, kind: SequenceKind) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(DiagError::InvalidBound(bound));
        }
        if kind == SequenceKind::R && bound > 1.0 {
            return Err(DiagError::RBoundAboveOne(bound));
        }
        let slack = bound_slack(bound);
        let lower = if kind == SequenceKind::Spectral { -bound - slack } else { 0.0 };
        for (i, &v) in values.iter().enumerate() {
            if !(v >= lower && v <= bound + slack) {
                return Err(DiagError::OutOfBounds { t: i + 1, value: v, bound });
            }
        }
        Ok(Self { values, bound, kind })
    }

    /// Clamps noisy estimates into `[0, bound]` before validation.
    pub fn from_estimates(values: &[f64], bound: f64, kind: SequenceKind) -> Result<Self> {
        Self::new(values.iter().map(|v| v.clamp(0.0, bound)).collect(), bound, kind)
    }

    /// `tau_a(1..=n)` of an atomic model, bounded by `Q_0((a, inf))`.
    pub fn tau_of_model(model: &MovingMaximaModel, a: f64, n: usize) -> Result<Self> {
        let values = model.tau_sequence(a, n);
        // a zero bound means tau vanishes identically; any positive bound is valid
        let bound = model.tau_bound(a).max(f64::MIN_POSITIVE);
        Self::new(values, bound, SequenceKind::Tau)
    }

    /// `r(1..=n)` generated by a symmetric spectral measure.
    pub fn from_spectral(mu: &SpectralMeasure, n: usize) -> Result<Self> {
        let values = (1..=n as i64)
            .map(|t| mu.r_from_spectral(t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, mu.total_weight(), SequenceKind::Spectral)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(1/n) sum_{t=1}^n values[t]`.
    pub fn cesaro_average(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.len() {
            return Err(DiagError::OutOfRange { n, len: self.len() });
        }
        Ok(compensated_sum(self.values[..n].iter().copied()) / n as f64)
    }

    /// Two-column CSV with header `t,value`.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (i, &value) in self.values.iter().enumerate() {
            out.serialize(CsvRow { t: i + 1, value })?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `t,value` rows; `t` must run `1, 2, ...` without gaps.
    pub fn read_csv<R: io::Read>(r: R, bound: f64, kind: SequenceKind) -> Result<Self> {
        let mut values = Vec::new();
        for (i, row) in csv::Reader::from_reader(r).deserialize::<CsvRow>().enumerate() {
            let row = row?;
            if row.t != i + 1 {
                return Err(DiagError::OutOfRange { n: row.t, len: i + 1 });
            }
            values.push(row.value);
        }
        Self::new(values, bound, kind)
    }
}

/// The finite-`n` form of the exponential Cesàro equivalence: for
/// `0 <= theta_t <= C`,
///
/// ```text
/// 1 + kappa * mean(theta) <= mean(exp(kappa * theta)) <= 1 + (e^{kappa C} - 1)/C * mean(theta)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpCesaro {
    pub n: usize,
    pub kappa: f64,
    pub cesaro: f64,
    pub exp_average: f64,
    pub lower: f64,
    pub upper: f64,
    pub sandwich_ok: bool,
}

pub fn cesaro_exp_equivalence(seq: &DependenceSequence, kappa: f64, n: usize) -> Result<ExpCesaro> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(DiagError::InvalidKappa(kappa));
    }
    let cesaro = seq.cesaro_average(n)?;
    let c = seq.bound();
    let exp_average = compensated_sum(seq.values[..n].iter().map(|&v| (kappa * v).exp())) / n as f64;
    let lower = 1.0 + kappa * cesaro;
    let upper = 1.0 + (kappa * c).exp_m1() / c * cesaro;
    // each side carries a few ulps of rounding; the inequality itself is exact
    let ulps = 8.0 * f64::EPSILON * upper;
    Ok(ExpCesaro {
        n,
        kappa,
        cesaro,
        exp_average,
        lower,
        upper,
        sandwich_ok: lower <= exp_average + ulps && exp_average <= upper + ulps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Pass at or below `tol`, inconclusive up to `2 tol`, fail above.
    pub fn from_statistic(stat: f64, tol: f64) -> Self {
        if stat <= tol {
            Verdict::Pass
        } else if stat <= 2.0 * tol {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub mixing_verdict: Verdict,
    pub ergodic_verdict: Verdict,
    /// Cesàro mean over the tail window; the ergodicity statistic.
    pub cesaro_tail: f64,
    /// Cesàro mean over the whole sequence, for reference.
    pub cesaro_full: f64,
    /// Supremum over the tail window; the mixing statistic.
    pub tail_sup: f64,
    /// Upper-density estimate of `{t : value > tol}`.
    pub exceptional_density_estimate: f64,
    pub tol: f64,
    pub tail_fraction: f64,
    pub len: usize,
    pub tail_start: usize,
}

/// Finite-horizon verdicts.
///
/// The tail window is the last `ceil(tail_fraction * n)` terms. Mixing is
/// judged on the supremum of `|value|` there, ergodicity on the absolute
/// Cesàro mean over the same window. Using one window for both keeps the
/// implication "mixing pass => ergodic pass" exact, and makes the statistic
/// insensitive to a transient at small `t`, which a full-length mean would
/// only dilute as `1/n`.
pub fn classify(seq: &DependenceSequence, tol: f64, tail_fraction: f64) -> Result<ClassificationReport> {
    const MIN_LEN: usize = 10;
    if seq.len() < MIN_LEN {
        return Err(DiagError::TooShort { len: seq.len(), need: MIN_LEN });
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(DiagError::InvalidParameter { name: "tol", value: tol });
    }
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(DiagError::InvalidParameter { name: "tail_fraction", value: tail_fraction });
    }
    let n = seq.len();
    let window = ((tail_fraction * n as f64).ceil() as usize).clamp(1, n);
    let tail = &seq.values[n - window..];
    let tail_sup = tail.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let cesaro_tail = (compensated_sum(tail.iter().copied()) / window as f64)
        .abs()
        .min(tail_sup);
    let cesaro_full = seq.cesaro_average(n)?;
    let density = density_zero_decomposition(seq, tol)?;
    Ok(ClassificationReport {
        mixing_verdict: Verdict::from_statistic(tail_sup, tol),
        ergodic_verdict: Verdict::from_statistic(cesaro_tail, tol),
        cesaro_tail,
        cesaro_full,
        tail_sup,
        exceptional_density_estimate: density.upper_density_estimate,
        tol,
        tail_fraction,
        len: n,
        tail_start: n - window + 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityDecomposition {
    /// `{t : |value[t]| > delta}`, 1-based.
    pub exception_set: Vec<usize>,
    pub upper_density_estimate: f64,
}

/// Exception set of a threshold and an estimate of its upper asymptotic
/// density: `sup_{n0 <= n <= len} |D ∩ [1, n]| / n` with `n0 = ceil(sqrt(len))`,
/// so that the transient at small `n` does not dominate the limsup estimate.
pub fn density_zero_decomposition(seq: &DependenceSequence, delta: f64) -> Result<DensityDecomposition> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(DiagError::InvalidParameter { name: "delta", value: delta });
    }
    let exception_set: Vec<usize> = seq
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > delta)
        .map(|(i, _)| i + 1)
        .collect();
    let len = seq.len();
    if len == 0 {
        return Ok(DensityDecomposition { exception_set, upper_density_estimate: 0.0 });
    }
    let n0 = ((len as f64).sqrt().ceil() as usize).clamp(1, len);
    // the ratio |D ∩ [1,n]|/n only increases at members of D
    let before = exception_set.partition_point(|&t| t <= n0);
    let mut best = before as f64 / n0 as f64;
    for (i, &t) in exception_set.iter().enumerate().skip(before) {
        best = best.max((i + 1) as f64 / t as f64);
    }
    Ok(DensityDecomposition { exception_set, upper_density_estimate: best })
}

/// Atomic spectral measure on `[-pi, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralMeasure {
    atoms: Vec<(f64, f64)>,
    symmetric: bool,
}

impl SpectralMeasure {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, w) in &atoms {
            if !(x.is_finite() && x.abs() <= PI && w.is_finite() && w > 0.0) {
                return Err(DiagError::InvalidSpectralAtom { location: x, weight: w });
            }
        }
        let mut pos: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| a.0 > 0.0).collect();
        let mut neg: Vec<(f64, f64)> = atoms.iter().filter(|a| a.0 < 0.0).map(|&(x, w)| (-x, w)).collect();
        pos.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        neg.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let symmetric = pos.len() == neg.len()
            && pos
                .iter()
                .zip(&neg)
                .all(|(p, q)| p.0 == q.0 && (p.1 - q.1).abs() <= 1e-12 * p.1.max(q.1));
        Ok(Self { atoms, symmetric })
    }

    /// Weight `w0` at 0 plus, for each `(x, w)`, mass `w/2` at `+x` and `-x`.
    pub fn symmetrized(w0: f64, off_zero: &[(f64, f64)]) -> Result<Self> {
        let mut atoms = Vec::new();
        if w0 > 0.0 {
            atoms.push((0.0, w0));
        }
        for &(x, w) in off_zero {
            atoms.push((x.abs(), w / 2.0));
            atoms.push((-x.abs(), w / 2.0));
        }
        Self::new(atoms)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn weight_at_zero(&self) -> f64 {
        self.atoms.iter().filter(|a| a.0 == 0.0).map(|a| a.1).sum()
    }

    /// `r(t) = sum_j w_j cos(t x_j)`; the imaginary part cancels by symmetry.
    pub fn r_from_spectral(&self, t: i64) -> Result<f64> {
        if !self.symmetric {
            return Err(DiagError::AsymmetricSpectral);
        }
        Ok(self.atoms.iter().map(|&(x, w)| w * (t as f64 * x).cos()).sum())
    }

    /// Bound on `|(1/n) sum_{t=1}^n r(t) - mu({0})|` from the geometric sum
    /// `|sum_{t=1}^n e^{itx}| <= 2 / |1 - e^{ix}|`.
    pub fn cesaro_error_bound(&self, n: usize) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.0 != 0.0)
            .map(|&(x, w)| w * 2.0 / (n as f64 * 2.0 * (x / 2.0).sin().abs()))
            .sum()
    }
}

/// Monte-Carlo estimate with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    /// `|value - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

fn check_proportion(which: &'static str, p: f64) -> Result<()> {
    if p <= 0.0 || p >= 1.0 {
        Err(DiagError::DegenerateProportion { which, value: p })
    } else {
        Ok(())
    }
}

fn check_replicates(n: usize) -> Result<()> {
    if n < MIN_REPLICATES {
        Err(DiagError::TooFewReplicates { got: n, need: MIN_REPLICATES })
    } else {
        Ok(())
    }
}

/// `tau_hat = log P^[X(0)<=a, X(t)<=a] - log P^[X(0)<=a] - log P^[X(t)<=a]`
/// from replicated pairs `(X(0), X(t))`.
///
/// The standard error uses the delta method with the full covariance of the
/// three indicator means, which share one sample.
pub fn estimate_tau_mc(samples: &[(f64, f64)], a: f64) -> Result<McEstimate> {
    check_replicates(samples.len())?;
    let n = samples.len() as f64;
    let (mut c0, mut ct, mut cj) = (0usize, 0usize, 0usize);
    for &(x0, xt) in samples {
        let b0 = x0 <= a;
        let bt = xt <= a;
        c0 += b0 as usize;
        ct += bt as usize;
        cj += (b0 && bt) as usize;
    }
    let (p0, pt, pj) = (c0 as f64 / n, ct as f64 / n, cj as f64 / n);
    check_proportion("P[X(0)<=a]", p0)?;
    check_proportion("P[X(t)<=a]", pt)?;
    check_proportion("P[X(0)<=a, X(t)<=a]", pj)?;
    let value = pj.ln() - p0.ln() - pt.ln();
    // gradient (1/pj, -1/p0, -1/pt); indicator covariances use I_joint <= I_0, I_t
    let var_j = (1.0 - pj) / pj;
    let var_0 = (1.0 - p0) / p0;
    let var_t = (1.0 - pt) / pt;
    let cov_j0 = (pj - pj * p0) / (pj * p0);
    let cov_jt = (pj - pj * pt) / (pj * pt);
    let cov_0t = (pj - p0 * pt) / (p0 * pt);
    let var = var_j + var_0 + var_t - 2.0 * cov_j0 - 2.0 * cov_jt + 2.0 * cov_0t;
    Ok(McEstimate { value, se: (var.max(0.0) / n).sqrt(), n: samples.len() })
}

/// `r_hat = 2 - rho_hat` with `rho_hat = -log P^[X(0)<=1, X(t)<=1]`, for
/// pairs with unit-Fréchet margins.
pub fn estimate_r_mc(samples: &[(f64, f64)]) -> Result<McEstimate> {
    check_replicates(samples.len())?;
    let n = samples.len() as f64;
    let cj = samples.iter().filter(|&&(x0, xt)| x0 <= 1.0 && xt <= 1.0).count();
    let pj = cj as f64 / n;
    if pj <= 0.0 {
        return Err(DiagError::DegenerateProportion { which: "P[X(0)<=1, X(t)<=1]", value: pj });
    }
    let value = 2.0 + pj.ln();
    let se = ((1.0 - pj) / (pj * n)).sqrt();
    Ok(McEstimate { value, se, n: samples.len() })
}

/// Nonparametric bootstrap standard error of `statistic`, resampling pairs
/// with replacement `resamples` times from a seeded stream.
pub fn bootstrap_se<F>(samples: &[(f64, f64)], resamples: usize, seed: u64, statistic: F) -> Result<f64>
where
    F: Fn(&[(f64, f64)]) -> Result<f64>,
{
    if resamples < 2 {
        return Err(DiagError::InvalidParameter { name: "resamples", value: resamples as f64 });
    }
    let n = samples.len();
    let mut buf = vec![(0.0, 0.0); n];
    let mut stats = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut rng = replicate_rng(seed, b as u64);
        for slot in buf.iter_mut() {
            *slot = samples[rng.random_range(0..n)];
        }
        stats.push(statistic(&buf)?);
    }
    let mean = compensated_sum(stats.iter().copied()) / resamples as f64;
    let var = compensated_sum(stats.iter().map(|s| (s - mean).powi(2))) / (resamples - 1) as f64;
    Ok(var.sqrt())
}
