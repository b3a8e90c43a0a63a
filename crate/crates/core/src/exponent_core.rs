//! Exact finite-dimensional laws of max-i.d. vectors through atomic exponent
//! measures.
//!
//! A max-i.d. vector `X` in `d` dimensions is described by its exponent
//! measure `Q` on `[-inf, inf)^d`:
//!
//! ```text
//! P[X <= y] = exp(-Q([-inf, y]^c))
//! ```
//!
//! When `Q` is a finite sum of point masses every such probability is a finite
//! sum followed by one exponential. [`MovingMaximaModel`] is a stationary
//! max-i.d. sequence whose finite-dimensional exponent measures are all
//! atomic, which makes the dependence coefficient
//!
//! ```text
//! tau_a(t) = log P[X(0)<=a, X(t)<=a] - log P[X(0)<=a] - log P[X(t)<=a]
//! ```
//!
//! and arbitrary cylinder-event probabilities exactly computable.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Slack allowed for floating round-off in [`MovingMaximaModel::lebowitz_check`].
pub const LEBOWITZ_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExponentError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("atom mass must be finite and positive, got {0}")]
    InvalidMass(f64),
    #[error("coordinate {0} is not allowed (NaN or +inf)")]
    InvalidCoordinate(f64),
    #[error("level {0} must be a finite real")]
    InvalidLevel(f64),
    #[error("projection needs at least one coordinate")]
    EmptyProjection,
    #[error("projection coordinate {index} out of range for dimension {dim}")]
    ProjectionOutOfRange { index: usize, dim: usize },
    #[error("empty index set")]
    EmptyIndices,
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, ExponentError>;

/// A level in `[-inf, inf)`. `NegInf` orders below every finite value and is
/// only ever compared, never used in arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum ExtendedReal {
    NegInf,
    Finite(f64),
}

impl ExtendedReal {
    /// Maps `f64::NEG_INFINITY` to the sentinel; rejects NaN and `+inf`.
    pub fn from_f64(v: f64) -> Result<Self> {
        if v == f64::NEG_INFINITY {
            Ok(ExtendedReal::NegInf)
        } else if v.is_finite() {
            // -0.0 and 0.0 are the same level
            Ok(ExtendedReal::Finite(if v == 0.0 { 0.0 } else { v }))
        } else {
            Err(ExponentError::InvalidCoordinate(v))
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtendedReal::NegInf => f64::NEG_INFINITY,
            ExtendedReal::Finite(v) => v,
        }
    }

    /// Strictly above the finite level `y`.
    #[inline]
    pub fn exceeds(self, y: f64) -> bool {
        matches!(self, ExtendedReal::Finite(v) if v > y)
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ExtendedReal::NegInf, ExtendedReal::NegInf) => Ordering::Equal,
            (ExtendedReal::NegInf, _) => Ordering::Less,
            (_, ExtendedReal::NegInf) => Ordering::Greater,
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => a.total_cmp(b),
        }
    }
}

/// A point of `[-inf, inf)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint(Vec<ExtendedReal>);

impl ExtendedPoint {
    pub fn new(coords: Vec<ExtendedReal>) -> Result<Self> {
        if coords.is_empty() {
            return Err(ExponentError::ZeroDimension);
        }
        Ok(ExtendedPoint(coords))
    }

    /// Builds a point from plain floats, `f64::NEG_INFINITY` standing for `-inf`.
    pub fn from_f64s(coords: &[f64]) -> Result<Self> {
        let coords = coords
            .iter()
            .map(|&v| ExtendedReal::from_f64(v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[ExtendedReal] {
        &self.0
    }

    /// True when the point lies outside `[-inf, y]`, i.e. some coordinate
    /// exceeds its level.
    #[inline]
    fn escapes(&self, y: &[f64]) -> bool {
        self.0.iter().zip(y).any(|(p, &l)| p.exceeds(l))
    }

    /// True when every coordinate exceeds its level.
    #[inline]
    fn dominates(&self, y: &[f64]) -> bool {
        self.0.iter().zip(y).all(|(p, &l)| p.exceeds(l))
    }

    fn is_all_neg_inf(&self) -> bool {
        self.0.iter().all(|c| *c == ExtendedReal::NegInf)
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: ExtendedPoint,
    pub mass: f64,
}

/// A finite sum of weighted point masses on `[-inf, inf)^dim`, kept in
/// canonical form: atoms sorted, equal points merged, all-`-inf` atoms
/// dropped (they charge no exceedance set of finite levels).
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicExponentMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

impl AtomicExponentMeasure {
    pub fn empty(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(ExponentError::ZeroDimension);
        }
        Ok(Self { dim, atoms: Vec::new() })
    }

    pub fn new(dim: usize, atoms: Vec<(ExtendedPoint, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(ExponentError::ZeroDimension);
        }
        for (point, mass) in &atoms {
            if point.dim() != dim {
                return Err(ExponentError::DimensionMismatch {
                    expected: dim,
                    got: point.dim(),
                });
            }
            if !(mass.is_finite() && *mass > 0.0) {
                return Err(ExponentError::InvalidMass(*mass));
            }
        }
        Ok(Self::canonical(dim, atoms))
    }

    fn canonical(dim: usize, mut raw: Vec<(ExtendedPoint, f64)>) -> Self {
        raw.retain(|(p, _)| !p.is_all_neg_inf());
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<Atom> = Vec::with_capacity(raw.len());
        for (point, mass) in raw {
            match atoms.last_mut() {
                Some(last) if last.point == point => last.mass += mass,
                _ => atoms.push(Atom { point, mass }),
            }
        }
        Self { dim, atoms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    fn check_levels(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(ExponentError::DimensionMismatch {
                expected: self.dim,
                got: y.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(ExponentError::InvalidLevel(bad));
        }
        Ok(())
    }

    fn exceedance_unchecked(&self, y: &[f64]) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.point.escapes(y))
            .map(|a| a.mass)
            .sum()
    }

    /// `Q([-inf, y]^c)`: total mass of atoms with at least one coordinate
    /// strictly above its level.
    pub fn exceedance_mass(&self, y: &[f64]) -> Result<f64> {
        self.check_levels(y)?;
        Ok(self.exceedance_unchecked(y))
    }

    /// `P[X <= y] = exp(-Q([-inf, y]^c))`.
    pub fn cylinder_prob(&self, y: &[f64]) -> Result<f64> {
        Ok((-self.exceedance_mass(y)?).exp())
    }

    /// Mass of the open orthant `(lower_1, inf) x ... x (lower_d, inf)`.
    pub fn orthant_mass(&self, lower: &[f64]) -> Result<f64> {
        self.check_levels(lower)?;
        Ok(self.orthant_unchecked(lower))
    }

    fn orthant_unchecked(&self, lower: &[f64]) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.point.dominates(lower))
            .map(|a| a.mass)
            .sum()
    }

    /// Exponent measure of the sub-vector `(X_i)_{i in coords}`: the image of
    /// `Q` under the coordinate projection, re-canonicalized.
    pub fn project_marginal(&self, coords: &[usize]) -> Result<Self> {
        if coords.is_empty() {
            return Err(ExponentError::EmptyProjection);
        }
        if let Some(&index) = coords.iter().find(|&&i| i >= self.dim) {
            return Err(ExponentError::ProjectionOutOfRange { index, dim: self.dim });
        }
        let raw = self
            .atoms
            .iter()
            .map(|a| {
                let pt = ExtendedPoint(coords.iter().map(|&i| a.point.0[i]).collect());
                (pt, a.mass)
            })
            .collect();
        Ok(Self::canonical(coords.len(), raw))
    }
}

/// A finite-support profile of a moving-maxima component: mass rate `mass`
/// and values `f(lag)` on finitely many integer lags (`-inf` elsewhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub mass: f64,
    pub support: Vec<(i64, f64)>,
}

/// Serialized form of a [`MovingMaximaModel`].
///
/// ```toml
/// diagonal = [[2.0, 0.3]]          # (level, mass)
///
/// [[profiles]]
/// mass = 0.5
/// support = [[0, 1.0], [1, 2.5]]   # (lag, value)
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub profiles: Vec<Profile>,
    #[serde(default)]
    pub diagonal: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledProfile {
    mass: f64,
    values: BTreeMap<i64, f64>,
}

impl CompiledProfile {
    fn at(&self, lag: i64) -> ExtendedReal {
        self.values
            .get(&lag)
            .map_or(ExtendedReal::NegInf, |&v| ExtendedReal::Finite(v))
    }
}

/// Stationary max-i.d. sequence
///
/// ```text
/// X(t) = max( max_j max_{(s, c_j) in N_j} f_j(t - s),  max_{diagonal} v )
/// ```
///
/// where each profile `j` is shifted along the points `s` of a Poisson
/// process on the integers with rate `c_j`, and each diagonal atom `(v, m)`
/// contributes the constant path `v` with probability `1 - e^{-m}`. The
/// exponent measure of `(X(t_1), ..., X(t_k))` is
///
/// ```text
/// sum_j c_j sum_s delta_{(f_j(t_1 - s), ..., f_j(t_k - s))} + sum m delta_{(v, ..., v)}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct MovingMaximaModel {
    profiles: Vec<CompiledProfile>,
    diagonal: Vec<(f64, f64)>,
}

impl TryFrom<ModelSpec> for MovingMaximaModel {
    type Error = ExponentError;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        let mut profiles = Vec::with_capacity(spec.profiles.len());
        for (j, p) in spec.profiles.into_iter().enumerate() {
            if !(p.mass.is_finite() && p.mass > 0.0) {
                return Err(ExponentError::InvalidModel(format!(
                    "profile {j}: mass must be finite and positive, got {}",
                    p.mass
                )));
            }
            if p.support.is_empty() {
                return Err(ExponentError::InvalidModel(format!("profile {j}: empty support")));
            }
            let mut values = BTreeMap::new();
            for (lag, v) in p.support {
                if !v.is_finite() {
                    return Err(ExponentError::InvalidModel(format!(
                        "profile {j}: value at lag {lag} must be finite, got {v}"
                    )));
                }
                if values.insert(lag, v).is_some() {
                    return Err(ExponentError::InvalidModel(format!(
                        "profile {j}: duplicate lag {lag}"
                    )));
                }
            }
            profiles.push(CompiledProfile { mass: p.mass, values });
        }
        for (i, &(v, m)) in spec.diagonal.iter().enumerate() {
            if !v.is_finite() || !(m.is_finite() && m > 0.0) {
                return Err(ExponentError::InvalidModel(format!(
                    "diagonal atom {i}: need finite level and positive mass, got ({v}, {m})"
                )));
            }
        }
        Ok(Self { profiles, diagonal: spec.diagonal })
    }
}

impl From<MovingMaximaModel> for ModelSpec {
    fn from(m: MovingMaximaModel) -> Self {
        ModelSpec {
            profiles: m
                .profiles
                .into_iter()
                .map(|p| Profile {
                    mass: p.mass,
                    support: p.values.into_iter().collect(),
                })
                .collect(),
            diagonal: m.diagonal,
        }
    }
}

/// Event `{X(t_i) <= y_i for all i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderEvent {
    entries: Vec<(i64, f64)>,
}

impl CylinderEvent {
    pub fn new(entries: Vec<(i64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(ExponentError::EmptyIndices);
        }
        if let Some(&(_, bad)) = entries.iter().find(|(_, y)| !y.is_finite()) {
            return Err(ExponentError::InvalidLevel(bad));
        }
        Ok(Self { entries })
    }

    /// `{X(t) <= level}`.
    pub fn single(t: i64, level: f64) -> Result<Self> {
        Self::new(vec![(t, level)])
    }

    pub fn entries(&self) -> &[(i64, f64)] {
        &self.entries
    }

    pub fn min_level(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min)
    }
}

/// Both sides of the positive-association sandwich
/// `P[A]P[B] <= P[A ∩ B_t] <= exp(theta) P[A]P[B]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LebowitzReport {
    pub level: f64,
    pub prob_a: f64,
    pub prob_b: f64,
    pub prob_joint: f64,
    /// `sum_i sum_j tau_a(t + t_j'' - t_i')`.
    pub theta: f64,
    /// `P[A ∩ B_t] - P[A]P[B]`.
    pub lower_slack: f64,
    /// `exp(theta) P[A]P[B] - P[A ∩ B_t]`.
    pub upper_slack: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

impl MovingMaximaModel {
    pub fn new(profiles: Vec<Profile>, diagonal: Vec<(f64, f64)>) -> Result<Self> {
        ModelSpec { profiles, diagonal }.try_into()
    }

    pub fn from_toml_str(s: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ModelSpec::from(self.clone())).expect("model serializes")
    }

    pub fn profile_count(&self) -> usize {
        self.profiles.len()
    }

    pub fn diagonal(&self) -> &[(f64, f64)] {
        &self.diagonal
    }

    /// Largest `max lag - min lag` over all profiles; `tau_a(t) - (diagonal
    /// part)` vanishes for `|t|` beyond it.
    pub fn max_span(&self) -> i64 {
        self.profiles
            .iter()
            .map(|p| {
                let lo = p.values.keys().next().copied().unwrap_or(0);
                let hi = p.values.keys().next_back().copied().unwrap_or(0);
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }

    /// Exponent measure `Q_{t_1,...,t_k}` of `(X(t_1), ..., X(t_k))`.
    pub fn finite_dim_measure(&self, indices: &[i64]) -> Result<AtomicExponentMeasure> {
        if indices.is_empty() {
            return Err(ExponentError::EmptyIndices);
        }
        Ok(self.measure_for(indices))
    }

    fn measure_for(&self, indices: &[i64]) -> AtomicExponentMeasure {
        let k = indices.len();
        let mut raw = Vec::new();
        for p in &self.profiles {
            let shifts: BTreeSet<i64> = indices
                .iter()
                .flat_map(|&t| p.values.keys().map(move |&lag| t - lag))
                .collect();
            for s in shifts {
                let point = ExtendedPoint(indices.iter().map(|&t| p.at(t - s)).collect());
                raw.push((point, p.mass));
            }
        }
        for &(v, m) in &self.diagonal {
            raw.push((ExtendedPoint(vec![ExtendedReal::Finite(v); k]), m));
        }
        AtomicExponentMeasure::canonical(k, raw)
    }

    /// `Q_0((a, inf))`, the uniform bound on `tau_a`.
    pub fn tau_bound(&self, a: f64) -> f64 {
        self.measure_for(&[0]).exceedance_unchecked(&[a])
    }

    /// `tau_a(t) = Q_{0,t}((a, inf) x (a, inf))`.
    pub fn tau_exact(&self, a: f64, t: i64) -> f64 {
        // stationarity gives tau(-t) = tau(t); evaluating at |t| keeps that exact in floating point
        self.measure_for(&[0, t.abs()]).orthant_unchecked(&[a, a])
    }

    /// `tau_a(t)` evaluated from the three probabilities in its definition.
    pub fn tau_from_definition(&self, a: f64, t: i64) -> f64 {
        let joint = (-self.measure_for(&[0, t]).exceedance_unchecked(&[a, a])).exp();
        let p0 = (-self.measure_for(&[0]).exceedance_unchecked(&[a])).exp();
        let pt = (-self.measure_for(&[t]).exceedance_unchecked(&[a])).exp();
        joint.ln() - p0.ln() - pt.ln()
    }

    /// `(tau_a(1), ..., tau_a(n))`.
    pub fn tau_sequence(&self, a: f64, n: usize) -> Vec<f64> {
        (1..=n as i64).map(|t| self.tau_exact(a, t)).collect()
    }

    /// Probability of the intersection of the events, each shifted in time
    /// by its paired offset.
    pub fn cylinder_joint_prob(&self, events: &[(CylinderEvent, i64)]) -> Result<f64> {
        let mut merged: BTreeMap<i64, f64> = BTreeMap::new();
        for (ev, shift) in events {
            for &(t, y) in &ev.entries {
                merged
                    .entry(t + shift)
                    .and_modify(|l| *l = l.min(y))
                    .or_insert(y);
            }
        }
        if merged.is_empty() {
            return Err(ExponentError::EmptyIndices);
        }
        let (indices, levels): (Vec<i64>, Vec<f64>) = merged.into_iter().unzip();
        Ok((-self.measure_for(&indices).exceedance_unchecked(&levels)).exp())
    }

    /// `P[A^(0) ∩ A^(1)_{s_1} ∩ ...] - prod_j P[A^(j)]`.
    pub fn factorization_gap(&self, events: &[(CylinderEvent, i64)]) -> Result<f64> {
        let joint = self.cylinder_joint_prob(events)?;
        let mut product = 1.0;
        for (ev, _) in events {
            product *= self.cylinder_joint_prob(&[(ev.clone(), 0)])?;
        }
        Ok(joint - product)
    }

    /// Evaluates both inequalities of the association sandwich for `A` and
    /// the shifted event `B_t`, with `a` the smallest level of either event.
    pub fn lebowitz_check(&self, a_ev: &CylinderEvent, b_ev: &CylinderEvent, t: i64) -> LebowitzReport {
        let level = a_ev.min_level().min(b_ev.min_level());
        let prob_a = self
            .cylinder_joint_prob(&[(a_ev.clone(), 0)])
            .expect("event is non-empty");
        let prob_b = self
            .cylinder_joint_prob(&[(b_ev.clone(), 0)])
            .expect("event is non-empty");
        let prob_joint = self
            .cylinder_joint_prob(&[(a_ev.clone(), 0), (b_ev.clone(), t)])
            .expect("events are non-empty");
        let mut theta = 0.0;
        for &(ti, _) in &a_ev.entries {
            for &(tj, _) in &b_ev.entries {
                theta += self.tau_exact(level, t + tj - ti);
            }
        }
        let product = prob_a * prob_b;
        let lower_slack = prob_joint - product;
        let upper_slack = theta.exp() * product - prob_joint;
        LebowitzReport {
            level,
            prob_a,
            prob_b,
            prob_joint,
            theta,
            lower_slack,
            upper_slack,
            lower_ok: lower_slack >= -LEBOWITZ_TOLERANCE,
            upper_ok: upper_slack >= -LEBOWITZ_TOLERANCE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NEG: f64 = f64::NEG_INFINITY;

    fn measure(dim: usize, atoms: &[(&[f64], f64)]) -> AtomicExponentMeasure {
        AtomicExponentMeasure::new(
            dim,
            atoms
                .iter()
                .map(|(p, m)| (ExtendedPoint::from_f64s(p).unwrap(), *m))
                .collect(),
        )
        .unwrap()
    }

    fn profile(mass: f64, support: &[(i64, f64)]) -> Profile {
        Profile { mass, support: support.to_vec() }
    }

    #[test]
    fn exceedance_examples() {
        assert_eq!(measure(1, &[(&[3.0], 0.5)]).exceedance_mass(&[2.0]).unwrap(), 0.5);
        assert_eq!(AtomicExponentMeasure::empty(2).unwrap().exceedance_mass(&[0.0, 0.0]).unwrap(), 0.0);
        let q = measure(2, &[(&[1.0, 2.0], 0.3), (&[0.0, 0.0], 0.7)]);
        assert_eq!(q.exceedance_mass(&[1.0, 1.0]).unwrap(), 0.3);
        assert_eq!(q.cylinder_prob(&[1.0, 1.0]).unwrap(), (-0.3f64).exp());
        assert!(matches!(
            q.exceedance_mass(&[1.0]),
            Err(ExponentError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn cylinder_prob_examples() {
        assert_eq!(AtomicExponentMeasure::empty(1).unwrap().cylinder_prob(&[0.0]).unwrap(), 1.0);
        let q = measure(1, &[(&[2.0], 0.4)]);
        assert_eq!(q.cylinder_prob(&[1.5]).unwrap(), (-0.4f64).exp());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ExtendedPoint::from_f64s(&[f64::INFINITY]).is_err());
        assert!(ExtendedPoint::from_f64s(&[f64::NAN]).is_err());
        assert!(AtomicExponentMeasure::new(1, vec![(ExtendedPoint::from_f64s(&[1.0]).unwrap(), 0.0)]).is_err());
        assert!(AtomicExponentMeasure::new(2, vec![(ExtendedPoint::from_f64s(&[1.0]).unwrap(), 1.0)]).is_err());
        assert!(MovingMaximaModel::new(vec![profile(1.0, &[])], vec![]).is_err());
        assert!(MovingMaximaModel::new(vec![profile(-1.0, &[(0, 1.0)])], vec![]).is_err());
        assert!(MovingMaximaModel::new(vec![profile(1.0, &[(0, 1.0), (0, 2.0)])], vec![]).is_err());
        assert!(CylinderEvent::new(vec![]).is_err());
    }

    #[test]
    fn canonicalization_merges_and_drops() {
        let q = measure(2, &[(&[1.0, NEG], 0.25), (&[1.0, NEG], 0.5), (&[NEG, NEG], 3.0)]);
        assert_eq!(q.atoms().len(), 1);
        assert_eq!(q.atoms()[0].mass, 0.75);
    }

    #[test]
    fn projection_examples() {
        let q = measure(2, &[(&[1.0, 2.0], 0.3), (&[1.0, 0.0], 0.7)]);
        assert_eq!(q.project_marginal(&[0, 1]).unwrap(), q);
        let p = q.project_marginal(&[0]).unwrap();
        assert_eq!(p.atoms().len(), 1);
        assert!((p.atoms()[0].mass - 1.0).abs() < 1e-15);
        assert_eq!(q.project_marginal(&[]), Err(ExponentError::EmptyProjection));
        assert!(matches!(q.project_marginal(&[2]), Err(ExponentError::ProjectionOutOfRange { .. })));

        // marginal exceedance equals mass of atoms whose first coord is above the level
        let r = measure(2, &[(&[1.0, 5.0], 0.3), (&[-2.0, 0.5], 0.2), (&[0.5, NEG], 0.4)]);
        for &y in &[-3.0, -1.0, 0.7, 2.0] {
            let by_enum: f64 = r.atoms().iter().filter(|a| a.point.coords()[0].exceeds(y)).map(|a| a.mass).sum();
            let projected = r.project_marginal(&[0]).unwrap().exceedance_mass(&[y]).unwrap();
            assert!((projected - by_enum).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_dim_measure_examples() {
        let m = MovingMaximaModel::new(vec![profile(0.7, &[(0, 1.5)])], vec![]).unwrap();
        let q = m.finite_dim_measure(&[0, 4]).unwrap();
        let expected = measure(2, &[(&[1.5, NEG], 0.7), (&[NEG, 1.5], 0.7)]);
        assert_eq!(q, expected);

        let d = MovingMaximaModel::new(vec![], vec![(2.0, 0.3)]).unwrap();
        assert_eq!(d.finite_dim_measure(&[0, 5]).unwrap(), measure(2, &[(&[2.0, 2.0], 0.3)]));
        assert_eq!(d.finite_dim_measure(&[]), Err(ExponentError::EmptyIndices));
    }

    #[test]
    fn shift_invariance() {
        let m = MovingMaximaModel::new(
            vec![profile(0.4, &[(-1, 0.2), (0, 1.0), (2, 3.0)]), profile(1.1, &[(0, -0.5), (3, 0.8)])],
            vec![(0.5, 0.2)],
        )
        .unwrap();
        assert_eq!(m.finite_dim_measure(&[0, 3]).unwrap(), m.finite_dim_measure(&[7, 10]).unwrap());
        assert_eq!(m.finite_dim_measure(&[2, -1, 5]).unwrap(), m.finite_dim_measure(&[-8, -11, -5]).unwrap());
    }

    #[test]
    fn tau_examples() {
        let indep = MovingMaximaModel::new(vec![profile(1.0, &[(0, 2.0)])], vec![]).unwrap();
        for t in 1..5 {
            assert_eq!(indep.tau_exact(0.0, t), 0.0);
            assert!(indep.tau_from_definition(0.0, t).abs() < 1e-15);
        }
        let diag = MovingMaximaModel::new(vec![], vec![(3.0, 0.6)]).unwrap();
        for t in [-4, 0, 1, 9] {
            assert_eq!(diag.tau_exact(1.0, t), 0.6);
            assert!((diag.tau_from_definition(1.0, t) - 0.6).abs() < 1e-14);
        }
        assert_eq!(diag.tau_exact(3.0, 2), 0.0);
        let pair = MovingMaximaModel::new(vec![profile(0.9, &[(0, 2.0), (1, 2.0)])], vec![]).unwrap();
        assert_eq!(pair.tau_exact(1.0, 1), 0.9);
        assert_eq!(pair.tau_exact(1.0, -1), 0.9);
        assert_eq!(pair.tau_exact(1.0, 2), 0.0);
        // t = 0 gives the marginal exceedance
        assert_eq!(pair.tau_exact(1.0, 0), pair.tau_bound(1.0));
    }

    #[test]
    fn cylinder_joint_examples() {
        let m = MovingMaximaModel::new(vec![profile(0.5, &[(0, 1.0), (1, 2.0)])], vec![]).unwrap();
        let a = CylinderEvent::new(vec![(0, 1.5), (1, 0.5)]).unwrap();
        let direct = m.finite_dim_measure(&[0, 1]).unwrap().cylinder_prob(&[1.5, 0.5]).unwrap();
        assert_eq!(m.cylinder_joint_prob(&[(a.clone(), 0)]).unwrap(), direct);

        let far = m.cylinder_joint_prob(&[(a.clone(), 0), (a.clone(), 50)]).unwrap();
        assert!((far - direct * direct).abs() < 1e-15);

        let single = CylinderEvent::single(0, 0.7).unwrap();
        let p = m.cylinder_joint_prob(&[(single.clone(), 0)]).unwrap();
        assert_eq!(m.cylinder_joint_prob(&[(single.clone(), 0), (single, 0)]).unwrap(), p);
        assert_eq!(m.cylinder_joint_prob(&[]), Err(ExponentError::EmptyIndices));
    }

    #[test]
    fn duplicate_indices_take_minimum_level() {
        let m = MovingMaximaModel::new(vec![profile(0.5, &[(0, 1.0), (2, 3.0)])], vec![(0.2, 0.1)]).unwrap();
        let loose = CylinderEvent::single(0, 2.0).unwrap();
        let tight = CylinderEvent::single(0, 0.5).unwrap();
        assert_eq!(
            m.cylinder_joint_prob(&[(loose, 0), (tight.clone(), 0)]).unwrap(),
            m.cylinder_joint_prob(&[(tight, 0)]).unwrap()
        );
    }

    #[test]
    fn lebowitz_equality_cases() {
        let m = MovingMaximaModel::new(vec![profile(0.8, &[(0, 1.0), (1, 2.0), (2, 0.5)])], vec![]).unwrap();
        let a = CylinderEvent::new(vec![(0, 0.7), (1, 1.2)]).unwrap();
        let b = CylinderEvent::new(vec![(0, 0.9), (2, 0.1)]).unwrap();
        let far = m.lebowitz_check(&a, &b, 40);
        assert!(far.lower_slack.abs() <= 1e-15 && far.lower_ok && far.upper_ok);

        let same = CylinderEvent::single(0, 0.6).unwrap();
        let r = m.lebowitz_check(&same, &same, 0);
        assert!(r.upper_slack.abs() <= 1e-15, "{r:?}");
        assert!(r.lower_ok && r.upper_ok);
    }

    #[test]
    fn model_file_round_trip() {
        let src = r#"
            diagonal = [[2.0, 0.3]]
            [[profiles]]
            mass = 0.5
            support = [[0, 1.0], [1, 2.5]]
        "#;
        let m = MovingMaximaModel::from_toml_str(src).unwrap();
        assert_eq!(m.profile_count(), 1);
        let again = MovingMaximaModel::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(m, again);
        assert!(MovingMaximaModel::from_toml_str("[[profiles]]\nmass = 1.0\nsupport = []\n").is_err());
        assert!(MovingMaximaModel::from_toml_str("bogus = 1\n").is_err());
    }

    fn arb_model() -> impl Strategy<Value = MovingMaximaModel> {
        let prof = (
            0.05f64..2.0,
            prop::collection::btree_map(-3i64..4, -2.0f64..3.0, 1..5),
        )
            .prop_map(|(mass, sup)| Profile { mass, support: sup.into_iter().collect() });
        (
            prop::collection::vec(prof, 0..4),
            prop::collection::vec((-1.5f64..3.0, 0.05f64..1.5), 0..3),
        )
            .prop_map(|(p, d)| MovingMaximaModel::new(p, d).unwrap())
    }

    proptest! {
        #[test]
        fn tau_is_symmetric_bounded_and_monotone(m in arb_model(), a in -2.0f64..3.0, t in 0i64..10) {
            let tau = m.tau_exact(a, t);
            prop_assert_eq!(tau, m.tau_exact(a, -t));
            prop_assert!(tau >= 0.0);
            prop_assert!(tau <= m.tau_bound(a) * (1.0 + 1e-14));
            prop_assert!(m.tau_exact(a + 0.3, t) <= tau * (1.0 + 1e-14));
            prop_assert!((tau - m.tau_from_definition(a, t)).abs() <= 1e-10);
        }

        #[test]
        fn projection_commutes_with_model(m in arb_model(), t in 1i64..8) {
            let pair = m.finite_dim_measure(&[0, t]).unwrap();
            prop_assert_eq!(pair.project_marginal(&[0]).unwrap(), m.finite_dim_measure(&[0]).unwrap());
            prop_assert_eq!(pair.project_marginal(&[1]).unwrap(), m.finite_dim_measure(&[t]).unwrap());
        }

        #[test]
        fn finite_range_factorizes(m in arb_model(), y in -1.0f64..2.0, k in 2usize..5) {
            // gaps wider than every profile make windows independent apart from the diagonal
            let gap = m.max_span() + 3;
            let diagless = MovingMaximaModel::new(ModelSpec::from(m.clone()).profiles, vec![]).unwrap();
            let ev = CylinderEvent::new(vec![(0, y), (1, y + 0.5)]).unwrap();
            let events: Vec<(CylinderEvent, i64)> = (0..k).map(|j| (ev.clone(), j as i64 * (gap + 1))).collect();
            prop_assert!(diagless.factorization_gap(&events).unwrap().abs() < 1e-14);
        }
    }
}
