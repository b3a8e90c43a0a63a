//! Command-line driver.
//!
//! One TOML config file may hold any of the sections `[exact]`, `[diag]`,
//! `[br]` and `[gas]`; each subcommand runs its section and `report` runs
//! every section present. Every run writes `summary.json` (deterministic for
//! a fixed config and seed), `manifest.json` (inputs, version, seed, wall
//! time) and one table per result in the chosen format.

use crate::brown_resnick::{
    self, exceptional_set_analysis, select_r_formula, simulate_br_path, theoretical_r, BrError, BrSimConfig,
    ExceptionalSetReport, FormulaSelection, RFormula, SimMethod, VariogramSpec,
};
use crate::ergodic_diag::{
    bootstrap_se, cesaro_exp_equivalence, classify, density_zero_decomposition, estimate_r_mc, estimate_tau_mc,
    ClassificationReport, DependenceSequence, DiagError, ExpCesaro, SequenceKind, SpectralMeasure, DEFAULT_TAIL_FRACTION,
    DEFAULT_TOL,
};
use crate::exponent_core::{CylinderEvent, ExponentError, MovingMaximaModel};
use crate::ideal_gas::{simulate_gas, GasConfig, GasError, GasEstimate, GasFlag};
use crate::stats::ks_one_sample;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "MAXID_OUT_DIR";
pub const DEFAULT_OUT_ROOT: &str = "maxid-out";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_FLAGGED: u8 = 3;

/// Printed with every config error.
pub const SCHEMA: &str = "\
config schema (TOML, all sections optional but at least one required):
  seed = <u64>                                   top-level, overridden by --seed
  [exact]   levels = [f64], horizon = <usize>, tol?, tail_fraction?
            [exact.model] diagonal = [[level, mass]], [[exact.model.profiles]] mass, support = [[lag, value]]
            [[exact.lebowitz]] a = [[lag, level]], b = [[lag, level]], shifts = [i64]
  [diag]    horizon = <usize>, tol?, tail_fraction?, kappas?
            spectral = { w0 = f64, atoms = [[x, w]] }  or  sequence_csv = <path>, bound = f64, kind?
  [br]      variogram = { kind = \"power\", theta, alpha } | { kind = \"dyadic_cosine\", order } | { kind = \"table\", points }
            [br.simulation] grid = [f64], replicates, method?, margin?, max_count?, levels?, bootstrap_resamples?
            [br.exceptional] epsilons = [f64], n_max = <u32>, grid_step?
  [gas]     dim, radius, grid = [f64], replicates, half_width?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Exact,
    Diag,
    Br,
    Gas,
    Report,
}

#[derive(Debug, Subcommand)]
enum CommandArg {
    /// Exact tau sequences, verdicts and positive-association checks for an atomic model.
    Exact,
    /// Verdicts for a spectral or tabulated dependence sequence.
    Diag,
    /// Brown-Resnick simulation, dependence formula check and exceptional-set analysis.
    Br,
    /// Ideal-gas nearest-particle simulation against exact tau.
    Gas,
    /// Every section present in the config.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "maxid", version, about = "Mixing and ergodicity diagnostics for max-i.d. processes")]
struct Cli {
    #[command(subcommand)]
    command: CommandArg,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `$MAXID_OUT_DIR/<command>` or `./maxid-out/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Overrides the replicate count of every simulation section.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDescriptor {
    pub command: Command,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub format: Format,
    pub replicates: Option<usize>,
    pub quiet: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}\n{SCHEMA}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("cannot write output to {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => EXIT_FLAGGED,
            _ => EXIT_VALIDATION,
        }
    }
}

impl From<ExponentError> for CliError {
    fn from(e: ExponentError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::DegenerateProportion { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<BrError> for CliError {
    fn from(e: BrError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<GasError> for CliError {
    fn from(e: GasError) -> Self {
        match e {
            GasError::Quadrature(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

// ---- config schema ----

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub exact: Option<ExactSection>,
    pub diag: Option<DiagSection>,
    pub br: Option<BrSection>,
    pub gas: Option<GasSection>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_tail_fraction() -> f64 {
    DEFAULT_TAIL_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactSection {
    pub model: MovingMaximaModel,
    pub levels: Vec<f64>,
    pub horizon: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default)]
    pub lebowitz: Vec<LebowitzCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LebowitzCase {
    pub a: Vec<(i64, f64)>,
    pub b: Vec<(i64, f64)>,
    pub shifts: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    pub w0: f64,
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagSection {
    pub horizon: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default)]
    pub kappas: Vec<f64>,
    pub spectral: Option<SpectralSection>,
    pub sequence_csv: Option<PathBuf>,
    pub bound: Option<f64>,
    pub kind: Option<SequenceKind>,
}

fn default_method() -> SimMethod {
    SimMethod::Normalized
}

fn default_margin() -> f64 {
    brown_resnick::DEFAULT_MARGIN
}

fn default_max_count() -> usize {
    brown_resnick::DEFAULT_MAX_COUNT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrSimulationSection {
    pub grid: Vec<f64>,
    pub replicates: usize,
    #[serde(default = "default_method")]
    pub method: SimMethod,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_max_count")]
    pub max_count: usize,
    /// Levels `a` for the `a * tau_a(t) = r(t)` cross-check.
    #[serde(default)]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub bootstrap_resamples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExceptionalSection {
    pub epsilons: Vec<f64>,
    pub n_max: u32,
    /// Defaults to `eps / 4`, eight points across the shortest `A_k` piece.
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrSection {
    pub variogram: VariogramSpec,
    pub simulation: Option<BrSimulationSection>,
    pub exceptional: Option<ExceptionalSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasSection {
    pub dim: usize,
    pub radius: f64,
    #[serde(default)]
    pub half_width: Option<f64>,
    pub grid: Vec<f64>,
    pub replicates: usize,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))
    }

    fn is_empty(&self) -> bool {
        self.exact.is_none() && self.diag.is_none() && self.br.is_none() && self.gas.is_none()
    }
}

// ---- outputs ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauRow {
    pub level: f64,
    pub t: i64,
    pub tau_exact: f64,
    pub tau_from_definition: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactLevel {
    pub level: f64,
    pub tau_bound: f64,
    pub classification: ClassificationReport,
    /// Diagonal mass above the level, the exact tail value of `tau`.
    pub diagonal_mass_above: f64,
    /// Set when the tail window lies beyond every profile's span, where
    /// `tau` equals the diagonal mass exactly.
    pub cesaro_tail_abs_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LebowitzRow {
    pub case: usize,
    pub shift: i64,
    pub prob_a: f64,
    pub prob_b: f64,
    pub prob_joint: f64,
    pub theta: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactSummary {
    pub horizon: usize,
    pub levels: Vec<ExactLevel>,
    pub max_tau_abs_diff: f64,
    pub lebowitz: Vec<LebowitzRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCheck {
    pub n: usize,
    pub cesaro_average: f64,
    pub weight_at_zero: f64,
    pub abs_diff: f64,
    pub error_bound: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagSummary {
    pub horizon: usize,
    pub classification: ClassificationReport,
    pub spectral: Option<SpectralCheck>,
    pub exp_equivalence: Vec<ExpCesaro>,
    pub exception_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariogramRow {
    pub t: f64,
    pub sigma2: f64,
    pub tail_bound: f64,
    pub r_double_tail: f64,
    pub r_single_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRow {
    pub t: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub passes_1pct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RRow {
    pub t: f64,
    pub r_hat: f64,
    pub se: f64,
    pub bootstrap_se: Option<f64>,
    /// `r(t)` under the selected formula.
    pub exact: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheckRow {
    pub t: f64,
    pub level: f64,
    pub a_tau_hat: f64,
    pub se: f64,
    pub exact: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrSimSummary {
    pub method: SimMethod,
    pub replicates: usize,
    pub mean_points: f64,
    pub exhausted: usize,
    pub marginals: Vec<MarginalRow>,
    pub selection: FormulaSelection,
    pub r: Vec<RRow>,
    pub cross_checks: Vec<CrossCheckRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrSummary {
    pub variogram: VariogramSpec,
    pub variogram_rows: Vec<VariogramRow>,
    pub simulation: Option<BrSimSummary>,
    pub exceptional: Vec<ExceptionalSetReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalRow {
    pub epsilon: f64,
    pub n: u32,
    pub measured: f64,
    pub bound: f64,
    pub resolution: f64,
    pub within_bound: bool,
    pub riemann_sum: f64,
    pub riemann_expected: f64,
    pub min_sigma2_off_d: f64,
    pub sigma2_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub command: Command,
    pub seed: u64,
    pub exact: Option<ExactSummary>,
    pub diag: Option<DiagSummary>,
    pub br: Option<BrSummary>,
    pub gas: Option<GasEstimate>,
    /// Numerical diagnostics that make the run exit with status 3.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Manifest<'a> {
    command: Command,
    config_path: &'a Path,
    config: &'a RunConfig,
    seed: u64,
    format: Format,
    replicates_override: Option<usize>,
    version: &'static str,
    wall_time_seconds: f64,
    files: &'a [String],
}

/// Result of a completed run; `summary.flags` non-empty maps to exit status 3.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: Summary,
    pub files: Vec<String>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> u8 {
        if self.summary.flags.is_empty() {
            0
        } else {
            EXIT_FLAGGED
        }
    }
}

struct TableWriter<'a> {
    dir: &'a Path,
    format: Format,
    files: Vec<String>,
}

impl TableWriter<'_> {
    fn write<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let file = match self.format {
            Format::Csv => format!("{name}.csv"),
            Format::Json => format!("{name}.json"),
        };
        let path = self.dir.join(&file);
        let out_err = |source| CliError::Output { path: path.clone(), source };
        match self.format {
            Format::Csv => {
                let mut w = csv::Writer::from_path(&path).map_err(|e| out_err(io::Error::other(e)))?;
                for row in rows {
                    w.serialize(row).map_err(|e| out_err(io::Error::other(e)))?;
                }
                w.flush().map_err(out_err)?;
            }
            Format::Json => {
                let text = serde_json::to_string_pretty(rows).map_err(|e| out_err(io::Error::other(e)))?;
                fs::write(&path, text + "\n").map_err(out_err)?;
            }
        }
        self.files.push(file);
        Ok(())
    }
}

// ---- sections ----

fn run_exact(sec: &ExactSection, tables: &mut TableWriter) -> Result<ExactSummary, CliError> {
    if sec.levels.is_empty() {
        return Err(CliError::Validation("[exact] levels must not be empty".into()));
    }
    let model = &sec.model;
    let mut tau_rows = Vec::new();
    let mut levels = Vec::new();
    for &a in &sec.levels {
        if !a.is_finite() {
            return Err(CliError::Validation(format!("level {a} must be finite")));
        }
        for t in 0..=sec.horizon as i64 {
            let tau_exact = model.tau_exact(a, t);
            let tau_from_definition = model.tau_from_definition(a, t);
            tau_rows.push(TauRow { level: a, t, tau_exact, tau_from_definition, abs_diff: (tau_exact - tau_from_definition).abs() });
        }
        let seq = DependenceSequence::tau_of_model(model, a, sec.horizon)?;
        let classification = classify(&seq, sec.tol, sec.tail_fraction)?;
        let diagonal_mass_above: f64 = model.diagonal().iter().filter(|d| d.0 > a).map(|d| d.1).sum();
        let cesaro_tail_abs_diff = (classification.tail_start as i64 > model.max_span())
            .then(|| (classification.cesaro_tail - diagonal_mass_above).abs());
        levels.push(ExactLevel { level: a, tau_bound: model.tau_bound(a), classification, diagonal_mass_above, cesaro_tail_abs_diff });
    }
    let mut lebowitz = Vec::new();
    for (case, c) in sec.lebowitz.iter().enumerate() {
        let a_ev = CylinderEvent::new(c.a.clone())?;
        let b_ev = CylinderEvent::new(c.b.clone())?;
        for &shift in &c.shifts {
            let r = model.lebowitz_check(&a_ev, &b_ev, shift);
            lebowitz.push(LebowitzRow {
                case,
                shift,
                prob_a: r.prob_a,
                prob_b: r.prob_b,
                prob_joint: r.prob_joint,
                theta: r.theta,
                lower_slack: r.lower_slack,
                upper_slack: r.upper_slack,
                lower_ok: r.lower_ok,
                upper_ok: r.upper_ok,
            });
        }
    }
    tables.write("exact_tau", &tau_rows)?;
    if !lebowitz.is_empty() {
        tables.write("exact_lebowitz", &lebowitz)?;
    }
    Ok(ExactSummary {
        horizon: sec.horizon,
        max_tau_abs_diff: tau_rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max),
        levels,
        lebowitz,
    })
}

fn run_diag(sec: &DiagSection, base: &Path, tables: &mut TableWriter) -> Result<DiagSummary, CliError> {
    let (seq, mu) = match (&sec.spectral, &sec.sequence_csv) {
        (Some(sp), None) => {
            let mu = SpectralMeasure::symmetrized(sp.w0, &sp.atoms)?;
            (DependenceSequence::from_spectral(&mu, sec.horizon)?, Some(mu))
        }
        (None, Some(path)) => {
            let bound = sec
                .bound
                .ok_or_else(|| CliError::Config("[diag] sequence_csv needs `bound`".into()))?;
            let path = base.join(path);
            let file = fs::File::open(&path)
                .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
            let seq = DependenceSequence::read_csv(file, bound, sec.kind.unwrap_or(SequenceKind::Tau))?;
            if seq.len() < sec.horizon {
                return Err(CliError::Validation(format!("sequence has {} values, horizon is {}", seq.len(), sec.horizon)));
            }
            (seq, None)
        }
        _ => return Err(CliError::Config("[diag] needs exactly one of `spectral` or `sequence_csv`".into())),
    };
    let classification = classify(&seq, sec.tol, sec.tail_fraction)?;
    let spectral = mu.map(|mu| -> Result<SpectralCheck, CliError> {
        let n = sec.horizon;
        let cesaro_average = seq.cesaro_average(n)?;
        let w0 = mu.weight_at_zero();
        let error_bound = mu.cesaro_error_bound(n);
        Ok(SpectralCheck {
            n,
            cesaro_average,
            weight_at_zero: w0,
            abs_diff: (cesaro_average - w0).abs(),
            error_bound,
            within_bound: (cesaro_average - w0).abs() <= error_bound,
        })
    });
    let exp_equivalence = sec
        .kappas
        .iter()
        .map(|&k| cesaro_exp_equivalence(&seq, k, seq.len()))
        .collect::<Result<Vec<_>, _>>()?;
    let exception_count = density_zero_decomposition(&seq, sec.tol)?.exception_set.len();
    let mut buf = Vec::new();
    seq.write_csv(&mut buf)?;
    match tables.format {
        Format::Csv => {
            let path = tables.dir.join("diag_sequence.csv");
            fs::write(&path, buf).map_err(|source| CliError::Output { path, source })?;
            tables.files.push("diag_sequence.csv".into());
        }
        Format::Json => {
            let rows: Vec<(usize, f64)> = seq.values().iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
            tables.write("diag_sequence", &rows)?;
        }
    }
    Ok(DiagSummary {
        horizon: sec.horizon,
        classification,
        spectral: spectral.transpose()?,
        exp_equivalence,
        exception_count,
    })
}

fn run_br(
    sec: &BrSection,
    seed: u64,
    replicates: Option<usize>,
    tables: &mut TableWriter,
    flags: &mut Vec<String>,
) -> Result<BrSummary, CliError> {
    sec.variogram.validate()?;
    let mut lags: Vec<f64> = Vec::new();
    if let Some(sim) = &sec.simulation {
        lags.extend(&sim.grid);
    }
    if let Some(ex) = &sec.exceptional {
        lags.extend((0..=ex.n_max + 1).map(|n| 2f64.powi(n as i32)));
    }
    let variogram_rows = lags
        .iter()
        .map(|&t| -> Result<VariogramRow, CliError> {
            let v = sec.variogram.evaluate(t)?;
            Ok(VariogramRow {
                t,
                sigma2: v.value,
                tail_bound: v.tail_bound,
                r_double_tail: theoretical_r(&sec.variogram, t, RFormula::DoubleTail)?,
                r_single_tail: theoretical_r(&sec.variogram, t, RFormula::SingleTail)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !variogram_rows.is_empty() {
        tables.write("br_variogram", &variogram_rows)?;
    }

    let simulation = match &sec.simulation {
        None => None,
        Some(sim) => {
            let mut cfg = BrSimConfig::new(sim.grid.clone(), replicates.unwrap_or(sim.replicates), seed)
                .with_method(sim.method)
                .with_margin(sim.margin);
            cfg.max_count = sim.max_count;
            let sample = simulate_br_path(&sec.variogram, &cfg)?;
            if sample.exhausted_count() > 0 {
                flags.push(format!("br: {} replicates hit max_count before the stopping rule", sample.exhausted_count()));
            }
            let marginals: Vec<MarginalRow> = cfg
                .grid
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    let ks = ks_one_sample(&sample.column(j), |y| if y <= 0.0 { 0.0 } else { (-1.0 / y).exp() });
                    MarginalRow { t, ks_statistic: ks.statistic, p_value: ks.p_value, passes_1pct: ks.passes(0.01) }
                })
                .collect();
            let mut estimates = Vec::new();
            for (j, &t) in cfg.grid.iter().enumerate().skip(1) {
                estimates.push((t, estimate_r_mc(&sample.pairs(0, j))?));
            }
            if estimates.is_empty() {
                return Err(CliError::Validation("[br.simulation] grid needs at least two points".into()));
            }
            let selection = select_r_formula(&sec.variogram, &estimates)?;
            let mut r_rows = Vec::new();
            for (j, (t, est)) in estimates.iter().enumerate() {
                let exact = theoretical_r(&sec.variogram, *t, selection.selected)?;
                let boot = match sim.bootstrap_resamples {
                    Some(b) => Some(bootstrap_se(&sample.pairs(0, j + 1), b, seed, |s| estimate_r_mc(s).map(|e| e.value))?),
                    None => None,
                };
                r_rows.push(RRow { t: *t, r_hat: est.value, se: est.se, bootstrap_se: boot, exact, abs_diff: (est.value - exact).abs() });
            }
            let mut cross_checks = Vec::new();
            for &a in &sim.levels {
                for (j, (t, _)) in estimates.iter().enumerate() {
                    let tau = estimate_tau_mc(&sample.pairs(0, j + 1), a)?;
                    let exact = theoretical_r(&sec.variogram, *t, selection.selected)?;
                    cross_checks.push(CrossCheckRow {
                        t: *t,
                        level: a,
                        a_tau_hat: a * tau.value,
                        se: a * tau.se,
                        exact,
                        abs_diff: (a * tau.value - exact).abs(),
                    });
                }
            }
            tables.write("br_marginals", &marginals)?;
            tables.write("br_r", &r_rows)?;
            if !cross_checks.is_empty() {
                tables.write("br_cross_check", &cross_checks)?;
            }
            Some(BrSimSummary {
                method: sim.method,
                replicates: cfg.replicates,
                mean_points: sample.mean_points(),
                exhausted: sample.exhausted_count(),
                marginals,
                selection,
                r: r_rows,
                cross_checks,
            })
        }
    };

    let mut exceptional = Vec::new();
    if let Some(ex) = &sec.exceptional {
        if !matches!(sec.variogram, VariogramSpec::DyadicCosine { .. }) {
            return Err(CliError::Validation("[br.exceptional] needs the dyadic_cosine variogram".into()));
        }
        let mut rows = Vec::new();
        for &eps in &ex.epsilons {
            let rep = exceptional_set_analysis(eps, ex.n_max, ex.grid_step.unwrap_or(eps / 4.0))?;
            if !rep.all_bounds_hold() {
                flags.push(format!("br: exceptional-set bound violated at epsilon {eps}"));
            }
            rows.extend(rep.records.iter().map(|r| ExceptionalRow {
                epsilon: eps,
                n: r.n,
                measured: r.measured,
                bound: r.bound,
                resolution: r.resolution,
                within_bound: r.measured <= r.bound + r.resolution,
                riemann_sum: r.riemann_sum,
                riemann_expected: r.riemann_expected,
                min_sigma2_off_d: r.min_sigma2_off_d,
                sigma2_floor: r.sigma2_floor,
            }));
            exceptional.push(rep);
        }
        tables.write("br_exceptional", &rows)?;
    }
    Ok(BrSummary { variogram: sec.variogram.clone(), variogram_rows, simulation, exceptional })
}

fn run_gas(
    sec: &GasSection,
    seed: u64,
    replicates: Option<usize>,
    tables: &mut TableWriter,
    flags: &mut Vec<String>,
) -> Result<GasEstimate, CliError> {
    let cfg = GasConfig {
        dim: sec.dim,
        radius: sec.radius,
        half_width: sec.half_width,
        grid: sec.grid.clone(),
        replicates: replicates.unwrap_or(sec.replicates),
        seed,
    };
    let est = simulate_gas(&cfg)?;
    for f in &est.flags {
        flags.push(match f {
            GasFlag::DegenerateProportion { t, value } => format!("gas: empirical probability {value} at t={t}"),
            GasFlag::BiasTooLarge { bias_bound, smallest_tau } => {
                format!("gas: truncation bias bound {bias_bound} exceeds 10% of smallest tau {smallest_tau}")
            }
        });
    }
    tables.write("gas_tau", &est.rows)?;
    Ok(est)
}

/// Runs one command and writes its artifacts.
pub fn run(desc: &RunDescriptor) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let text = fs::read_to_string(&desc.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", desc.config.display())))?;
    let config = RunConfig::from_toml_str(&text)?;
    if config.is_empty() {
        return Err(CliError::Config("no section found".into()));
    }
    let wants = |present: bool, name: &str, cmd: Command| -> Result<bool, CliError> {
        match desc.command {
            Command::Report => Ok(present),
            c if c == cmd && !present => Err(CliError::Config(format!("missing [{name}] section"))),
            c => Ok(c == cmd),
        }
    };
    let run_exact_sec = wants(config.exact.is_some(), "exact", Command::Exact)?;
    let run_diag_sec = wants(config.diag.is_some(), "diag", Command::Diag)?;
    let run_br_sec = wants(config.br.is_some(), "br", Command::Br)?;
    let run_gas_sec = wants(config.gas.is_some(), "gas", Command::Gas)?;
    let seed = desc.seed.or(config.seed).unwrap_or(0);

    fs::create_dir_all(&desc.out).map_err(|source| CliError::Output { path: desc.out.clone(), source })?;
    let mut tables = TableWriter { dir: &desc.out, format: desc.format, files: Vec::new() };
    let mut flags = Vec::new();
    let base = desc.config.parent().unwrap_or(Path::new("."));

    let exact = match (&config.exact, run_exact_sec) {
        (Some(sec), true) => Some(run_exact(sec, &mut tables)?),
        _ => None,
    };
    let diag = match (&config.diag, run_diag_sec) {
        (Some(sec), true) => Some(run_diag(sec, base, &mut tables)?),
        _ => None,
    };
    let br = match (&config.br, run_br_sec) {
        (Some(sec), true) => Some(run_br(sec, seed, desc.replicates, &mut tables, &mut flags)?),
        _ => None,
    };
    let gas = match (&config.gas, run_gas_sec) {
        (Some(sec), true) => Some(run_gas(sec, seed, desc.replicates, &mut tables, &mut flags)?),
        _ => None,
    };
    if let Some(ex) = &exact {
        if ex.lebowitz.iter().any(|r| !(r.lower_ok && r.upper_ok)) {
            flags.push("exact: positive-association sandwich violated".into());
        }
    }

    let summary = Summary { command: desc.command, seed, exact, diag, br, gas, flags };
    let write_json = |name: &str, text: String| -> Result<(), CliError> {
        let path = desc.out.join(name);
        fs::write(&path, text + "\n").map_err(|source| CliError::Output { path, source })
    };
    write_json(SUMMARY_FILE, to_json(&summary))?;
    let mut files = tables.files;
    files.push(SUMMARY_FILE.into());
    let manifest = Manifest {
        command: desc.command,
        config_path: &desc.config,
        config: &config,
        seed,
        format: desc.format,
        replicates_override: desc.replicates,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        files: &files,
    };
    write_json(MANIFEST_FILE, to_json(&manifest))?;
    files.push(MANIFEST_FILE.into());
    Ok(RunOutcome { summary, files })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn default_out(command: Command) -> PathBuf {
    let root = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT), PathBuf::from);
    let name = match command {
        Command::Exact => "exact",
        Command::Diag => "diag",
        Command::Br => "br",
        Command::Gas => "gas",
        Command::Report => "report",
    };
    root.join(name)
}

/// Parses `std::env::args`, runs, and maps the outcome to an exit status.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        CommandArg::Exact => Command::Exact,
        CommandArg::Diag => Command::Diag,
        CommandArg::Br => Command::Br,
        CommandArg::Gas => Command::Gas,
        CommandArg::Report => Command::Report,
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config is required\n{SCHEMA}");
        return ExitCode::from(EXIT_VALIDATION);
    };
    let desc = RunDescriptor {
        command,
        config,
        seed: cli.seed,
        out: cli.out.unwrap_or_else(|| default_out(command)),
        format: cli.format,
        replicates: cli.replicates,
        quiet: cli.quiet,
    };
    match run(&desc) {
        Ok(outcome) => {
            if !desc.quiet {
                println!("wrote {} files to {}", outcome.files.len(), desc.out.display());
            }
            for f in &outcome.summary.flags {
                eprintln!("flagged: {f}");
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
