//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use choo_siow::choice::{
    choice_probabilities, equilibrium_consistency, gumbel_sample, seeded_rng, sigma_limit, simulate_choices,
    ChoiceModel, EULER_MASCHERONI, GUMBEL_VARIANCE,
};
use choo_siow::io::ReportFile;
use choo_siow::model::DEFAULT_CLEARING_TOLERANCE;
use choo_siow::solver::hessian_at;
use choo_siow::statics::{
    finite_difference_check, participation_analysis, spectral_diagnostic, transfer_analysis, CheckMode,
    FiniteDifferenceReport,
};
use choo_siow::{initial_guess, solve, solve_from, statics_matrix, Equilibrium, SolverOptions, ValidatedMarket};
use common::{market, market_text, random_market};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

/// Markets shared by the randomized criteria.
struct Corpus {
    instances: Vec<(ValidatedMarket, Equilibrium)>,
    max_iterations: usize,
    failures: Vec<String>,
    elapsed: Duration,
}

fn corpus() -> Corpus {
    let start = Instant::now();
    let mut rng: ChaCha8Rng = seeded_rng(SEED);
    let opts = SolverOptions::default();
    let mut instances = Vec::new();
    let mut failures = Vec::new();
    let mut max_iterations = 0;
    for n in 0..500 {
        let m = random_market(&mut rng, 12, 0.0, 5.0);
        match solve(&m, &opts) {
            Ok(eq) => {
                max_iterations = max_iterations.max(eq.iterations());
                instances.push((m, eq));
            }
            Err(e) => failures.push(format!("market {n}: {e}")),
        }
    }
    Corpus {
        instances,
        max_iterations,
        failures,
        elapsed: start.elapsed(),
    }
}

fn closed_forms() -> Verdict {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    let mut run = |rows: &[Vec<f64>], nu: &[f64]| {
        let m = market(rows, nu);
        let start = Instant::now();
        let eq = solve(&m, &opts).unwrap();
        slowest = slowest.max(start.elapsed());
        eq
    };
    let eq = run(&[vec![1.0]], &[100.0, 100.0]);
    for b in eq.amplitudes().beta() {
        worst = worst.max(rel(*b, 50f64.sqrt()));
    }
    worst = worst.max(rel(eq.distribution().married[(0, 0)], 50.0));
    let eq = run(&[vec![1.0]], &[4.0, 1.0]);
    let d = eq.distribution();
    worst = worst
        .max(rel(d.married[(0, 0)], 0.8))
        .max(rel(d.single_men[0], 3.2))
        .max(rel(d.single_women[0], 0.2));
    verdict(
        worst <= 1e-9 && slowest < Duration::from_millis(10),
        format!("max relative error {worst:.2e}, slowest solve {slowest:?}"),
    )
}

fn existence_uniqueness(corpus: &Corpus) -> Verdict {
    let start = Instant::now();
    let mut rng: ChaCha8Rng = seeded_rng(SEED + 1);
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    let mut restart_failures = 0;
    for (m, eq) in corpus.instances.iter().take(50) {
        let base = initial_guess(m.population());
        for _ in 0..20 {
            let start_point: Vec<f64> = base.iter().map(|b| b + rng.gen_range(-2.0..=2.0)).collect();
            match solve_from(m, &opts, &start_point) {
                Ok(other) => {
                    for (a, b) in eq.amplitudes().beta().iter().zip(other.amplitudes().beta()) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Err(_) => restart_failures += 1,
            }
        }
    }
    let total = corpus.elapsed + start.elapsed();
    let converged = corpus.failures.is_empty() && corpus.instances.len() == 500;
    verdict(
        converged
            && corpus.max_iterations <= 200
            && restart_failures == 0
            && worst <= 1e-8
            && total.as_secs_f64() < 60.0,
        format!(
            "{}/500 converged (max {} iterations), restarts: {} failures, max |Δβ| {worst:.2e}, {total:.2?}{}",
            corpus.instances.len(),
            corpus.max_iterations,
            restart_failures,
            corpus
                .failures
                .first()
                .map(|f| format!("; first failure: {f}"))
                .unwrap_or_default()
        ),
    )
}

fn clearing(corpus: &Corpus) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut min_entry = f64::INFINITY;
    let mut failing = 0;
    for (m, eq) in &corpus.instances {
        let report = eq.distribution().clearing_report(m);
        worst = worst
            .max(report.max_row_gap)
            .max(report.max_column_gap)
            .max(report.max_identity_gap);
        min_entry = min_entry.min(report.min_entry);
        if !report.holds(DEFAULT_CLEARING_TOLERANCE) {
            failing += 1;
        }
    }
    verdict(
        failing == 0 && !corpus.instances.is_empty(),
        format!("{failing} failing markets, worst relative gap {worst:.2e}, min entry {min_entry:.2e}"),
    )
}

fn theorem_structure(corpus: &Corpus) -> Verdict {
    let mut asymmetry: f64 = 0.0;
    let mut not_spd = 0;
    let mut violations = 0;
    let mut checked = 0;
    for (m, eq) in &corpus.instances {
        if m.is_degenerate() || m.gains().entries().iter().any(|&p| p <= 0.0) {
            continue;
        }
        checked += 1;
        // Symmetry of the raw inverse, before the report symmetrizes it.
        let h = hessian_at(eq).unwrap().hessian;
        let raw = h.clone().try_inverse().unwrap() * 2.0;
        asymmetry = asymmetry.max((&raw - raw.transpose()).amax() / raw.amax());
        let report = statics_matrix(eq).unwrap();
        if report.r_matrix.clone().cholesky().is_none() {
            not_spd += 1;
        }
        if report.sign_check.mode != CheckMode::Strict || !report.sign_check.failures.is_empty() {
            violations += report.sign_check.failures.len().max(1);
        }
    }
    verdict(
        checked > 0 && asymmetry <= 1e-9 && not_spd == 0 && violations == 0,
        format!("{checked} markets, max relative asymmetry {asymmetry:.2e}, {not_spd} not SPD, {violations} sign violations"),
    )
}

fn fd_reports(corpus: &Corpus) -> (Vec<FiniteDifferenceReport>, Vec<String>, Duration) {
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (m, _) in corpus.instances.iter().take(50) {
        match finite_difference_check(m, 1e-5) {
            Ok(r) => reports.push(r),
            Err(e) => errors.push(e.to_string()),
        }
    }
    (reports, errors, start.elapsed())
}

fn derivative_oracle(reports: &[FiniteDifferenceReport], errors: &[String], elapsed: Duration) -> Verdict {
    let worst = reports.iter().map(|r| r.max_relative_error()).fold(0.0, f64::max);
    let location = reports
        .iter()
        .max_by(|a, b| a.max_relative_error().total_cmp(&b.max_relative_error()))
        .map(|r| {
            [&r.substitution, &r.gains, &r.elasticity, &r.transfer, &r.participation]
                .into_iter()
                .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
                .unwrap()
                .location
                .clone()
        })
        .unwrap_or_default();
    verdict(
        reports.len() == 50 && errors.is_empty() && worst <= 1e-3 && elapsed.as_secs_f64() < 120.0,
        format!(
            "{} instances, max relative error {worst:.2e} ({location}), {elapsed:.2?}",
            reports.len()
        ),
    )
}

fn corollary(corpus: &Corpus, reports: &[FiniteDifferenceReport]) -> Verdict {
    let mut min_transfer = f64::INFINITY;
    let mut min_participation = f64::INFINITY;
    for (m, eq) in &corpus.instances {
        if m.gains().entries().iter().any(|&p| p <= 0.0) {
            continue;
        }
        let report = statics_matrix(eq).unwrap();
        let t = transfer_analysis(eq, &report, None).unwrap();
        let (ni, nj, _) = t.transfer_derivatives.shape();
        for i in 0..ni {
            for j in 0..nj {
                min_transfer = min_transfer.min(*t.transfer_derivatives.get(i, j, i));
            }
        }
        for p in participation_analysis(&report) {
            min_participation = min_participation.min(p.own_derivative);
        }
    }
    let numeric_transfer = reports
        .iter()
        .map(|r| r.min_numeric_own_transfer)
        .fold(f64::INFINITY, f64::min);
    let numeric_participation = reports
        .iter()
        .map(|r| r.min_numeric_participation)
        .fold(f64::INFINITY, f64::min);
    verdict(
        min_transfer > 0.0 && min_participation > 0.0 && numeric_transfer > 0.0 && numeric_participation > 0.0,
        format!(
            "analytic min ∂τ/∂ν_i {min_transfer:.2e}, ∂s/∂ν {min_participation:.2e}; \
             numeric {numeric_transfer:.2e}, {numeric_participation:.2e}"
        ),
    )
}

fn spectral(corpus: &Corpus) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (m, eq) in &corpus.instances {
        if m.is_degenerate() {
            continue;
        }
        checked += 1;
        worst = worst.max(spectral_diagnostic(eq).unwrap().lambda_max);
    }
    let fixture =
        spectral_diagnostic(&solve(&market(&[vec![1.0]], &[100.0, 100.0]), &SolverOptions::default()).unwrap())
            .unwrap()
            .lambda_max;
    verdict(
        checked > 0 && worst < 1.0 && (fixture - 1.0 / 9.0).abs() <= 1e-10,
        format!(
            "{checked} markets, max λ {worst:.6}, fixture λ − 1/9 = {:.2e}",
            fixture - 1.0 / 9.0
        ),
    )
}

fn gumbel_and_logit() -> Verdict {
    let start = Instant::now();
    let n = 1_000_000;
    let mut rng = seeded_rng(SEED);
    let draws: Vec<f64> = (0..n).map(|_| gumbel_sample(&mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let variance = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let model = ChoiceModel::new(vec![0.0, 2f64.ln()], 1.0).unwrap();
    let sim = simulate_choices(&model, n as u64, SEED).unwrap();
    let freq_gap = (sim.frequencies[0] - 1.0 / 3.0)
        .abs()
        .max((sim.frequencies[1] - 2.0 / 3.0).abs());
    let mut divergence: f64 = 0.0;
    for nu in [[100.0, 100.0], [4.0, 1.0]] {
        let eq = solve(&market(&[vec![1.0]], &nu), &SolverOptions::default()).unwrap();
        divergence = divergence.max(equilibrium_consistency(&eq, n as u64, SEED).unwrap().max_deviation());
    }
    let elapsed = start.elapsed();
    let passed = (mean - EULER_MASCHERONI).abs() <= 0.005
        && (mean - 0.5772).abs() <= 0.005
        && (variance - GUMBEL_VARIANCE).abs() <= 0.02
        && (variance - 1.6449).abs() <= 0.02
        && freq_gap <= 0.005
        && divergence < 0.005
        && elapsed.as_secs_f64() < 30.0;
    verdict(
        passed,
        format!(
            "mean {mean:.5}, variance {variance:.5}, logit gap {freq_gap:.2e}, consistency {divergence:.2e}, {elapsed:.2?}"
        ),
    )
}

fn sigma_limits() -> Verdict {
    let utilities = vec![0.3, -1.0, 0.2, 0.05];
    let limit = sigma_limit(&ChoiceModel::new(utilities.clone(), 1.0).unwrap());
    let cold = choice_probabilities(&ChoiceModel::new(utilities.clone(), 1e-4).unwrap());
    let hot = choice_probabilities(&ChoiceModel::new(utilities.clone(), 1e3).unwrap());
    let cold_gap = cold.iter().zip(&limit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let uniform = 1.0 / utilities.len() as f64;
    let hot_gap = hot.iter().map(|p| (p - uniform).abs()).fold(0.0, f64::max);
    verdict(
        cold_gap <= 1e-6 && hot_gap <= 1e-3,
        format!("σ=1e-4 gap {cold_gap:.2e}, σ=1e3 gap from uniform {hot_gap:.2e}"),
    )
}

fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_choosiow"))
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn cli_round_trip() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rng: ChaCha8Rng = seeded_rng(SEED + 2);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for n in 0..10 {
        let (ni, nj) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let rows: Vec<Vec<f64>> = (0..ni)
            .map(|_| (0..nj).map(|_| rng.gen_range(0.01..=5.0)).collect())
            .collect();
        let nu: Vec<f64> = (0..ni + nj).map(|_| 10f64.powf(rng.gen_range(0.0..=6.0))).collect();
        let input = dir.path().join(format!("market{n}.txt"));
        let solved = dir.path().join(format!("solved{n}.json"));
        std::fs::write(&input, market_text(&rows, &nu)).unwrap();
        let (code, _) = cli(&[
            "solve",
            "--input",
            input.to_str().unwrap(),
            "--output",
            solved.to_str().unwrap(),
        ]);
        if code != 0 {
            failures.push(format!("solve exit {code}"));
            continue;
        }
        let (code, stdout) = cli(&["estimate-gains", "--input", solved.to_str().unwrap()]);
        let report = ReportFile::from_json(std::str::from_utf8(&stdout).unwrap());
        match (code, report.ok().and_then(|r| r.estimate)) {
            (0, Some(est)) => {
                for (i, row) in rows.iter().enumerate() {
                    for (j, &p) in row.iter().enumerate() {
                        worst = worst.max((est.gains[i][j] - p).abs() / p);
                    }
                }
            }
            (code, _) => failures.push(format!("estimate-gains exit {code}")),
        }
    }
    let fixture = dir.path().join("fixture.txt");
    std::fs::write(
        &fixture,
        market_text(&[vec![1.0, 0.5], vec![2.0, 0.0]], &[40.0, 25.0, 30.0, 60.0]),
    )
    .unwrap();
    let args = [
        "simulate",
        "--input",
        fixture.to_str().unwrap(),
        "--seed",
        "17",
        "--samples",
        "20000",
    ];
    let (code_a, first) = cli(&args);
    let (code_b, second) = cli(&args);
    let reproducible = code_a == 0 && code_b == 0 && first == second && !first.is_empty();
    verdict(
        failures.is_empty() && worst <= 1e-8 && reproducible,
        format!(
            "10 markets, max relative Π error {worst:.2e}, simulate reproducible: {reproducible}{}",
            failures.first().map(|f| format!("; {f}")).unwrap_or_default()
        ),
    )
}

fn main() {
    let mut all_passed = true;
    let mut record = |number: usize, title: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| verdict(false, "panicked; see the message above"));
        all_passed &= v.passed;
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!("{status} {number:>2} {title}: {} [{:.2?}]", v.detail, start.elapsed());
    };

    record(1, "closed-form 1x1 markets", &mut closed_forms);
    let corpus = corpus();
    record(2, "existence and uniqueness", &mut || existence_uniqueness(&corpus));
    record(3, "market clearing and identity", &mut || clearing(&corpus));
    record(4, "substitution matrix structure", &mut || theorem_structure(&corpus));
    let (reports, errors, elapsed) = fd_reports(&corpus);
    record(5, "finite-difference derivative oracle", &mut || {
        derivative_oracle(&reports, &errors, elapsed)
    });
    record(6, "transfer and participation monotonicity", &mut || {
        corollary(&corpus, &reports)
    });
    record(7, "spectral bound", &mut || spectral(&corpus));
    record(8, "Gumbel and logit validation", &mut gumbel_and_logit);
    record(9, "σ-limits", &mut sigma_limits);
    record(10, "CLI round trip and reproducibility", &mut cli_round_trip);

    if !all_passed {
        std::process::exit(1);
    }
}
