//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use maxid::brown_resnick::{
    exceptional_set_analysis, select_r_formula, simulate_br_path, theoretical_r, BrSimConfig, RFormula,
    VariogramSpec,
};
use maxid::ergodic_diag::{
    cesaro_exp_equivalence, classify, estimate_r_mc, estimate_tau_mc, DependenceSequence, SequenceKind,
    SpectralMeasure, Verdict, DEFAULT_TAIL_FRACTION, DEFAULT_TOL,
};
use maxid::exponent_core::{CylinderEvent, MovingMaximaModel, Profile};
use maxid::ideal_gas::{ball_volume, hitting_bound, simulate_gas, survival_exact, tau_exact_integral, GasConfig};
use maxid::rng::{replicate_rng, SimRng};
use maxid::stats::ks_one_sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn random_model(rng: &mut SimRng, with_diagonal: bool) -> MovingMaximaModel {
    let profiles = (0..rng.random_range(1..=5))
        .map(|_| {
            let mut lags: Vec<i64> = (-3..9).collect();
            let size = rng.random_range(1..=6);
            let mut support = Vec::with_capacity(size);
            for _ in 0..size {
                let lag = lags.swap_remove(rng.random_range(0..lags.len()));
                support.push((lag, rng.random_range(-2.0..3.0)));
            }
            Profile { mass: rng.random_range(0.05..2.0), support }
        })
        .collect();
    let diagonal = if with_diagonal {
        (0..rng.random_range(1..=2))
            .map(|_| (rng.random_range(-1.5..3.0), rng.random_range(0.05..1.0)))
            .collect()
    } else {
        Vec::new()
    };
    MovingMaximaModel::new(profiles, diagonal).expect("valid random model")
}

fn random_event(rng: &mut SimRng) -> CylinderEvent {
    let entries = (0..rng.random_range(1..=3))
        .map(|_| (rng.random_range(-3..=3), rng.random_range(-1.0..3.0)))
        .collect();
    CylinderEvent::new(entries).expect("valid event")
}

fn criterion_1() -> Outcome {
    let mut rng = replicate_rng(101, 0);
    let mut worst = 0.0f64;
    let models = 1200;
    for i in 0..models {
        let m = random_model(&mut rng, i % 2 == 0);
        for a in [-1.0, 0.0, 1.0, 2.0] {
            for t in 0..=12 {
                worst = worst.max((m.tau_exact(a, t) - m.tau_from_definition(a, t)).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("{models} models, max |tau_exact - tau_from_definition| = {worst:.3e} (tol 1e-10)"))
}

fn criterion_2() -> Outcome {
    let mut rng = replicate_rng(102, 0);
    let (models, pairs) = (500, 20);
    let mut checks = 0usize;
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    for i in 0..models {
        let m = random_model(&mut rng, i % 3 != 0);
        for _ in 0..pairs {
            let a = random_event(&mut rng);
            let b = random_event(&mut rng);
            for t in -6..=6 {
                let r = m.lebowitz_check(&a, &b, t);
                checks += 1;
                min_slack = min_slack.min(r.lower_slack).min(r.upper_slack);
                if !(r.lower_ok && r.upper_ok) {
                    violations += 1;
                }
            }
        }
    }
    // equality cases: far separation without a diagonal, and A = B at t = 0
    let mut worst_equality = 0.0f64;
    for _ in 0..200 {
        let m = random_model(&mut rng, false);
        let a = random_event(&mut rng);
        let b = random_event(&mut rng);
        let far = m.lebowitz_check(&a, &b, 3 * (m.max_span() + 8));
        worst_equality = worst_equality.max(far.lower_slack.abs()).max(far.upper_slack.abs());
        let level = rng.random_range(-1.0..3.0);
        let single = CylinderEvent::single(0, level).unwrap();
        let same = m.lebowitz_check(&single, &single, 0);
        worst_equality = worst_equality.max(same.upper_slack.abs());
    }
    let ok = violations == 0 && min_slack >= -1e-12 && worst_equality <= 1e-12;
    outcome(
        ok,
        format!(
            "{checks} checks, {violations} violations, min slack {min_slack:.3e}; equality cases max |slack| {worst_equality:.3e}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = replicate_rng(103, 0);
    let horizon = 200;
    let mut finite_bad = 0usize;
    let mut diag_cases = 0usize;
    let mut diag_bad = 0usize;
    let mut worst = 0.0f64;
    for i in 0..400 {
        let with_diagonal = i % 2 == 1;
        let m = random_model(&mut rng, with_diagonal);
        for a in [-1.0, 0.0, 1.0, 2.0] {
            let seq = DependenceSequence::tau_of_model(&m, a, horizon).unwrap();
            let rep = classify(&seq, DEFAULT_TOL, DEFAULT_TAIL_FRACTION).unwrap();
            let above: f64 = m.diagonal().iter().filter(|d| d.0 > a).map(|d| d.1).sum();
            if !with_diagonal {
                finite_bad += (rep.mixing_verdict != Verdict::Pass || rep.ergodic_verdict != Verdict::Pass) as usize;
            } else if above > 0.0 {
                diag_cases += 1;
                let diff = (rep.cesaro_tail - above).abs();
                worst = worst.max(diff);
                diag_bad += (rep.ergodic_verdict != Verdict::Fail || diff > 1e-10) as usize;
            }
        }
    }
    outcome(
        finite_bad == 0 && diag_bad == 0,
        format!(
            "finite-support misclassified {finite_bad}/800; diagonal cases {diag_cases}, misclassified {diag_bad}, max |cesaro_tail - mass| {worst:.3e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = replicate_rng(104, 0);
    let n = 100_000;
    let checkpoints: Vec<usize> = {
        let mut c: Vec<usize> = (0..=50).map(|k| (10f64.powf(k as f64 / 10.0)).round() as usize).collect();
        c.dedup();
        c
    };
    let mut checked = 0usize;
    let mut failures = 0usize;
    for i in 0..200 {
        let c = [0.5, 1.0, 4.0][i % 3];
        let values: Vec<f64> = match i % 4 {
            0 => (0..n).map(|_| rng.random_range(0.0..=c)).collect(),
            1 => (0..n).map(|_| if rng.random_bool(0.05) { c } else { 0.0 }).collect(),
            2 => (1..=n).map(|t| c / (t as f64).sqrt()).collect(),
            _ => (0..n).map(|_| c * rng.random::<f64>().powi(8)).collect(),
        };
        let seq = DependenceSequence::new(values, c, SequenceKind::Tau).unwrap();
        for kappa in [0.5, 1.0] {
            for &k in &checkpoints {
                let r = cesaro_exp_equivalence(&seq, kappa, k).unwrap();
                checked += 1;
                failures += !r.sandwich_ok as usize;
            }
        }
    }
    outcome(failures == 0, format!("200 sequences, {checked} (sequence, kappa, n) checks, {failures} failures"))
}

fn frechet_cdf(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else {
        (-1.0 / y).exp()
    }
}

fn criterion_5() -> Outcome {
    let spec = VariogramSpec::Power { theta: 1.0, alpha: 1.0 };
    let cfg = BrSimConfig::new(vec![0.0, 1.0], 100_000, 105);
    let sample = simulate_br_path(&spec, &cfg).unwrap();
    let ks: Vec<_> = (0..2).map(|j| ks_one_sample(&sample.column(j), frechet_cdf)).collect();
    let ok = ks.iter().all(|k| k.passes(0.01)) && sample.exhausted_count() == 0;
    outcome(
        ok,
        format!(
            "1e5 replicates, KS p-values {:.3} and {:.3} (level 0.01), {} exhausted",
            ks[0].p_value,
            ks[1].p_value,
            sample.exhausted_count()
        ),
    )
}

fn criterion_6() -> Outcome {
    let spec = VariogramSpec::Power { theta: 1.0, alpha: 1.0 };
    let lags = [0.5, 1.0, 2.0, 4.0];
    let mut grid = vec![0.0];
    grid.extend(lags);
    let sample = simulate_br_path(&spec, &BrSimConfig::new(grid, 100_000, 106)).unwrap();
    let estimates: Vec<_> = lags
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, estimate_r_mc(&sample.pairs(0, j + 1)).unwrap()))
        .collect();
    let sel = select_r_formula(&spec, &estimates).unwrap();
    let mut ok = sel.selected == RFormula::DoubleTail;
    let mut worst_z = 0.0f64;
    for (t, est) in &estimates {
        let z = (est.value - theoretical_r(&spec, *t, sel.selected).unwrap()).abs() / est.se;
        worst_z = worst_z.max(z);
        ok &= z <= 3.0;
    }
    let mut worst_cross = 0.0f64;
    for a in [1.0, 2.0] {
        for (j, (_, r)) in estimates.iter().enumerate() {
            let tau = estimate_tau_mc(&sample.pairs(0, j + 1), a).unwrap();
            let se = ((a * tau.se).powi(2) + r.se.powi(2)).sqrt();
            let z = (a * tau.value - r.value).abs() / se;
            worst_cross = worst_cross.max(z);
            ok &= z <= 3.0;
        }
    }
    outcome(
        ok,
        format!(
            "selected {:?} (chi2 {:.1} vs {:.1} for Phi_bar), max |r_hat - r|/se {worst_z:.2}, max |a tau_hat - r_hat|/se {worst_cross:.2}",
            sel.selected, sel.chi2_double_tail, sel.chi2_single_tail
        ),
    )
}

fn criterion_7() -> Outcome {
    let spec = VariogramSpec::dyadic_for_horizon(2f64.powi(20));
    let cap = 2.0 * PI * PI / 3.0 + 1e-6;
    let max_pow = (0..=20).map(|n| spec.sigma2(2f64.powi(n)).unwrap()).fold(0.0, f64::max);
    let mut ok = max_pow <= cap;
    let mut notes = vec![format!("max sigma^2(2^n) {max_pow:.6} <= {cap:.6}")];
    for eps in [0.02, 0.05, 0.1] {
        let rep = exceptional_set_analysis(eps, 16, eps / 4.0).unwrap();
        let d_ok = rep.records.iter().all(|r| r.measured <= r.bound + r.resolution);
        let s_ok = rep.records.iter().all(|r| r.min_sigma2_off_d >= r.sigma2_floor);
        let b_ok = rep.records.iter().all(|r| {
            r.b_measured.iter().zip(&r.b_exact).zip(&r.b_resolution).all(|((m, e), res)| (m - e).abs() <= *res)
        });
        let dens_ok = rep.density_estimate <= rep.density_bound;
        let worst_ratio = rep.records.iter().map(|r| r.measured / r.bound).fold(0.0, f64::max);
        ok &= d_ok && s_ok && b_ok && dens_ok;
        notes.push(format!(
            "eps {eps}: max lambda(D)/bound {worst_ratio:.3}, density {:.4} <= {:.2}, sigma^2 floor {}, B measures {}",
            rep.density_estimate,
            rep.density_bound,
            if s_ok { "ok" } else { "VIOLATED" },
            if b_ok { "ok" } else { "off" }
        ));
    }
    outcome(ok, notes.join("; "))
}

/// Plain Monte-Carlo `V(a) P[x + W(t) ∈ B(a)]` with `x` uniform on `B(a)` in one dimension.
fn gas_tau_oracle(a: f64, t: f64, draws: u64, seed: u64) -> (f64, f64) {
    let mut rng = replicate_rng(seed, 0);
    let s = t.sqrt();
    let mut hits = 0u64;
    for _ in 0..draws {
        let x = rng.random_range(-a..a);
        let z: f64 = StandardNormal.sample(&mut rng);
        hits += ((x + s * z).abs() < a) as u64;
    }
    let p = hits as f64 / draws as f64;
    let v = 2.0 * a;
    (v * p, v * (p * (1.0 - p) / draws as f64).sqrt())
}

fn criterion_8() -> Outcome {
    let cfg = GasConfig::new(1, 1.0, vec![0.0, 0.25, 1.0, 4.0], 100_000, 108);
    let est = simulate_gas(&cfg).unwrap();
    let s_exact = survival_exact(1, 1.0).unwrap();
    let s_z = (est.survival_hat - s_exact).abs() / est.survival_se;
    let mut ok = s_z <= 3.0 && est.flags.is_empty();
    let mut worst_tau_z = 0.0f64;
    for row in est.rows.iter().filter(|r| r.t > 0.0) {
        let z = row.abs_diff / row.se;
        worst_tau_z = worst_tau_z.max(z);
        ok &= z <= 3.0;
    }
    let mut worst_oracle = 0.0f64;
    let mut oracle_se = 0.0f64;
    for (i, t) in [0.25, 1.0, 4.0].into_iter().enumerate() {
        let (mc, se) = gas_tau_oracle(1.0, t, 1 << 30, 208 + i as u64);
        worst_oracle = worst_oracle.max((mc - tau_exact_integral(1, 1.0, t).unwrap()).abs());
        oracle_se = oracle_se.max(se);
    }
    ok &= worst_oracle <= 1e-4;
    let mut bound_violations = 0usize;
    for d in 1..=3 {
        for a in [0.5, 1.0, 2.0] {
            for k in -20..=20 {
                let t = 10f64.powf(k as f64 / 5.0);
                let tau = tau_exact_integral(d, a, t).unwrap();
                bound_violations += (tau > hitting_bound(d, a, t).unwrap() || tau > ball_volume(d, a).unwrap()) as usize;
            }
        }
    }
    ok &= bound_violations == 0;
    outcome(
        ok,
        format!(
            "survival z {s_z:.2}, max tau z {worst_tau_z:.2}, max |quadrature - MC oracle| {worst_oracle:.2e} (oracle se {oracle_se:.1e}), bound violations {bound_violations}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = replicate_rng(109, 0);
    let n = 10_000;
    let mut ok = true;
    let mut worst_margin = f64::INFINITY;
    let mut verdicts = Vec::new();
    for w0 in [0.0, 0.3, 1.0] {
        let mut fails = 0usize;
        for _ in 0..50 {
            let k = rng.random_range(1..=3);
            let total: f64 = rng.random_range(0.1..0.8);
            let off: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(0.5..=PI), total / k as f64)).collect();
            let mu = SpectralMeasure::symmetrized(w0, &off).unwrap();
            let seq = DependenceSequence::from_spectral(&mu, n).unwrap();
            let err = (seq.cesaro_average(n).unwrap() - w0).abs();
            let bound = mu.cesaro_error_bound(n);
            worst_margin = worst_margin.min(bound - err);
            ok &= err <= bound;
            let rep = classify(&seq, DEFAULT_TOL, DEFAULT_TAIL_FRACTION).unwrap();
            let failed = rep.ergodic_verdict == Verdict::Fail;
            fails += failed as usize;
            ok &= failed == (w0 > DEFAULT_TOL);
        }
        verdicts.push(format!("w0={w0}: {fails}/50 fail"));
    }
    outcome(ok, format!("min (bound - error) {worst_margin:.3e}; {}", verdicts.join(", ")))
}

fn fixtures() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatched = Vec::new();
    let mut failed = Vec::new();
    let files = fixtures();
    for cfg in &files {
        let name = cfg.file_stem().unwrap().to_string_lossy().into_owned();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{name}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_maxid"))
                .args(["report", "--quiet", "--seed", "12345", "--config"])
                .arg(cfg)
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            if !status.success() {
                failed.push(format!("{name} (status {status})"));
            }
            outputs.push(std::fs::read(out.join("summary.json")).unwrap_or_default());
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            mismatched.push(name);
        }
    }
    outcome(
        mismatched.is_empty() && failed.is_empty() && !files.is_empty(),
        format!("{} fixtures, byte mismatches {mismatched:?}, failed runs {failed:?}", files.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("tau from exponent measure equals tau from probabilities", criterion_1),
        ("positive-association sandwich", criterion_2),
        ("exact-model classification", criterion_3),
        ("finite-n exponential Cesaro sandwich", criterion_4),
        ("Brown-Resnick unit-Frechet marginals", criterion_5),
        ("Brown-Resnick dependence formula", criterion_6),
        ("dyadic-cosine exceptional sets", criterion_7),
        ("ideal gas survival and tau", criterion_8),
        ("spectral atom at zero", criterion_9),
        ("CLI determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|p| label.contains(p.as_str()) || name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        failures += !o.ok as usize;
        println!(
            "{label} {}: {name}: {} [{:.1}s]",
            if o.ok { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
