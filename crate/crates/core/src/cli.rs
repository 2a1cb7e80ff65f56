//! The `choosiow` command line.
//!
//! Every subcommand produces a [`ReportFile`]; failures produce one too,
//! carrying an `error` block. Exit codes: 0 success, 1 input error, 2 solver
//! failure, 3 invariant-check failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::choice::equilibrium_consistency;
use crate::duality::probe_conjugate;
use crate::error::Error;
use crate::io::distribution::ObservedDistribution;
use crate::io::report::{
    CheckBlock, CheckItem, DeltaBlock, EquilibriumBlock, ErrorBlock, EstimateBlock, FiniteDifferenceEntry, InputEcho,
    Settings, ShockEntry, SimulationBlock, StaticsBlock, TransfersBlock, WhatIfBlock,
};
use crate::io::{parse_distribution_str, parse_market, parse_tables, GainsMode, InputError, MarketFile, ReportFile};
use crate::model::DEFAULT_CLEARING_TOLERANCE;
use crate::solver::{reduce_unpopulated, solve, Equilibrium, SolverOptions, TypeReduction};
use crate::statics::{
    finite_difference_check, participation_analysis, spectral_diagnostic, statics_matrix, transfer_analysis,
    SignCheckKind, StaticsReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Largest finite-difference relative error `check` accepts.
pub const FD_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "choosiow", version, about = "Solve and analyse Choo–Siow marriage markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve for the equilibrium distribution.
    Solve,
    /// Equilibrium plus comparative statics.
    Statics,
    /// Equilibrium plus transfer indices and their derivatives.
    Transfers,
    /// Re-solve under population and gains shocks.
    Whatif,
    /// Monte Carlo consistency of the logit choices with the equilibrium.
    Simulate,
    /// Run the invariant suite; exits 3 when any check fails.
    Check,
    /// Recover gains from an observed distribution or a solve report.
    EstimateGains,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Statics => "statics",
            Command::Transfers => "transfers",
            Command::Whatif => "whatif",
            Command::Simulate => "simulate",
            Command::Check => "check",
            Command::EstimateGains => "estimate-gains",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// Market file, gains CSV (with --population-csv), or for
    /// estimate-gains a distribution file or solve report.
    #[arg(long, global = true, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Population table accompanying a gains CSV given as --input.
    #[arg(long, global = true, value_name = "PATH")]
    pub population_csv: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Newton stopping tolerance, relative to the population norm.
    #[arg(long, global = true, default_value_t = SolverOptions::default().gradient_tolerance)]
    pub tolerance: f64,
    #[arg(long = "max-iter", global = true, default_value_t = SolverOptions::default().max_iterations)]
    pub max_iter: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Simulated agents per type.
    #[arg(long, global = true, default_value_t = 100_000)]
    pub samples: u64,
    /// Add DELTA to a type's population; qualify shared labels as
    /// `male:LABEL` or `female:LABEL`.
    #[arg(long = "shock-nu", global = true, value_name = "LABEL=DELTA")]
    pub shock_nu: Vec<String>,
    /// Add DELTA to a gains entry, in the units of the input's gains mode.
    /// ROW and COL are labels or 1-based indices.
    #[arg(long = "shock-pi", global = true, value_name = "ROW,COL=DELTA")]
    pub shock_pi: Vec<String>,
    /// Override the gains mode of the input.
    #[arg(long = "gains-mode", global = true, value_enum)]
    pub gains_mode: Option<GainsMode>,
    /// Relative step of the finite-difference oracle used by `check`.
    #[arg(long = "fd-step", global = true, default_value_t = 1e-5)]
    pub fd_step: f64,
    /// Write the shocked market of `whatif` to this market file.
    #[arg(long = "save-scenario", global = true, value_name = "PATH")]
    pub save_scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub report: ReportFile,
}

#[derive(Debug)]
enum Failure {
    Input(InputError),
    Model(Error),
    Check,
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        match e {
            InputError::Model(inner) => Failure::Model(inner),
            other => Failure::Input(other),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

impl Failure {
    fn error_block(&self) -> ErrorBlock {
        let (kind, exit_code) = match self {
            Failure::Input(_) => ("input", EXIT_INPUT),
            Failure::Check => ("check_failed", EXIT_CHECK),
            Failure::Model(e) => match e {
                Error::Scaling { .. } => ("scaling", EXIT_SOLVER),
                Error::NonConvergence { .. } => ("non_convergence", EXIT_SOLVER),
                Error::Factorization { .. } => ("factorization", EXIT_SOLVER),
                Error::PowerIteration { .. } => ("power_iteration", EXIT_SOLVER),
                _ => ("input", EXIT_INPUT),
            },
        };
        let message = match self {
            Failure::Input(e) => e.to_string(),
            Failure::Model(e) => e.to_string(),
            Failure::Check => "one or more invariant checks failed".to_string(),
        };
        ErrorBlock {
            kind: kind.to_string(),
            message,
            exit_code,
        }
    }
}

/// Runs a parsed command line. Never panics on bad input; the exit code and
/// the report's `error` block describe any failure.
pub fn run(cli: &Cli) -> Outcome {
    let opts = &cli.options;
    let mut report = ReportFile::new(cli.command.name(), settings(cli));
    let result = dispatch(cli.command, opts, &mut report);
    let exit_code = match result {
        Ok(()) => EXIT_OK,
        Err(failure) => {
            let block = failure.error_block();
            let code = block.exit_code;
            report.error = Some(block);
            code
        }
    };
    Outcome { exit_code, report }
}

fn settings(cli: &Cli) -> Settings {
    let o = &cli.options;
    Settings {
        tolerance: o.tolerance,
        max_iterations: o.max_iter,
        clearing_tolerance: DEFAULT_CLEARING_TOLERANCE,
        seed: Some(o.seed),
        samples: (cli.command == Command::Simulate).then_some(o.samples),
        fd_step: (cli.command == Command::Check).then_some(o.fd_step),
    }
}

fn solver_options(opts: &Options) -> Result<SolverOptions, Failure> {
    let solver = SolverOptions {
        gradient_tolerance: opts.tolerance,
        max_iterations: opts.max_iter,
        ..SolverOptions::default()
    };
    solver.validate()?;
    Ok(solver)
}

fn load_market(opts: &Options) -> Result<MarketFile, Failure> {
    let input = opts.input.as_deref().ok_or_else(missing_input)?;
    let mut file = match &opts.population_csv {
        Some(pop) => parse_tables(input, pop, opts.gains_mode.unwrap_or(GainsMode::Gains))?,
        None => parse_market(input)?,
    };
    if let Some(mode) = opts.gains_mode {
        file.gains_mode = mode;
        file.validate()?;
    }
    Ok(file)
}

fn missing_input() -> Failure {
    Failure::Input(InputError::Io {
        path: "<none>".into(),
        message: "--input is required".into(),
    })
}

fn echo(file: &MarketFile, source: Option<&Path>) -> InputEcho {
    InputEcho {
        source: source.map(|p| p.display().to_string()),
        male_types: file.male_types.clone(),
        female_types: file.female_types.clone(),
        gains_mode: file.gains_mode.to_string(),
        gains: file.gains.clone(),
        populations: file.populations.clone(),
        c: file.c_matrix.clone(),
    }
}

struct Solved {
    eq: Equilibrium,
    reduction: TypeReduction,
    block: EquilibriumBlock,
}

fn solve_file(file: &MarketFile, solver: &SolverOptions) -> Result<Solved, Failure> {
    let gains = file.gains_matrix()?;
    let (market, reduction) = reduce_unpopulated(&gains, &file.populations)?;
    let eq = solve(&market, solver)?;
    let block = EquilibriumBlock::new(&eq, &reduction, &file.male_types, &file.female_types);
    Ok(Solved { eq, reduction, block })
}

fn dispatch(command: Command, opts: &Options, report: &mut ReportFile) -> Result<(), Failure> {
    if command == Command::EstimateGains {
        report.estimate = Some(estimate_gains(opts)?);
        return Ok(());
    }
    let solver = solver_options(opts)?;
    let file = load_market(opts)?;
    report.input = Some(echo(&file, opts.input.as_deref()));
    let solved = solve_file(&file, &solver)?;
    report.equilibrium = Some(solved.block.clone());
    let eq = &solved.eq;
    match command {
        Command::Solve | Command::EstimateGains => {}
        Command::Statics => {
            let statics = statics_matrix(eq)?;
            report.statics = Some(StaticsBlock::new(eq, &statics, &spectral_diagnostic(eq)?));
        }
        Command::Transfers => {
            let statics = statics_matrix(eq)?;
            let c = file.c().map(|c| reduce_matrix(&c, &solved.reduction));
            report.transfers = Some(TransfersBlock::new(eq, &transfer_analysis(eq, &statics, c.as_ref())?));
        }
        Command::Whatif => {
            let (shocked_file, shocks) = apply_shocks(&file, opts)?;
            let shocked = solve_file(&shocked_file, &solver)?;
            if let Some(path) = &opts.save_scenario {
                std::fs::write(path, shocked_file.to_text()).map_err(|e| InputError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
            report.whatif = Some(WhatIfBlock {
                shocks,
                delta: DeltaBlock::between(&solved.block, &shocked.block),
                baseline: solved.block,
                shocked: shocked.block,
                scenario: opts.save_scenario.as_ref().map(|p| p.display().to_string()),
            });
        }
        Command::Simulate => {
            let record = equilibrium_consistency(eq, opts.samples, opts.seed)?;
            report.simulation = Some(SimulationBlock::new(eq, &record));
        }
        Command::Check => {
            let block = run_checks(eq, opts.fd_step)?;
            let passed = block.passed;
            report.check = Some(block);
            if !passed {
                return Err(Failure::Check);
            }
        }
    }
    Ok(())
}

fn reduce_matrix(m: &DMatrix<f64>, reduction: &TypeReduction) -> DMatrix<f64> {
    DMatrix::from_fn(reduction.kept_male.len(), reduction.kept_female.len(), |r, c| {
        m[(reduction.kept_male[r], reduction.kept_female[c])]
    })
}

fn shock_error(spec: &str, why: &str) -> Failure {
    Failure::Input(InputError::Dimension(format!("bad shock `{spec}`: {why}")))
}

fn split_shock(spec: &str) -> Result<(&str, f64), Failure> {
    let (target, delta) = spec
        .rsplit_once('=')
        .ok_or_else(|| shock_error(spec, "expected TARGET=DELTA"))?;
    let delta: f64 = delta
        .trim()
        .parse()
        .map_err(|_| shock_error(spec, "DELTA is not a number"))?;
    if !delta.is_finite() {
        return Err(shock_error(spec, "DELTA must be finite"));
    }
    Ok((target.trim(), delta))
}

/// Index into `labels`, by label or by 1-based position.
fn find_label(labels: &[String], key: &str) -> Option<usize> {
    labels
        .iter()
        .position(|l| l == key)
        .or_else(|| match key.parse::<usize>() {
            Ok(n) if (1..=labels.len()).contains(&n) => Some(n - 1),
            _ => None,
        })
}

fn population_index(file: &MarketFile, spec: &str, target: &str) -> Result<usize, Failure> {
    let ni = file.male_types.len();
    let male = |l: &str| file.male_types.iter().position(|m| m == l);
    let female = |l: &str| file.female_types.iter().position(|f| f == l).map(|j| ni + j);
    if let Some(label) = target.strip_prefix("male:") {
        return male(label).ok_or_else(|| shock_error(spec, "unknown male type"));
    }
    if let Some(label) = target.strip_prefix("female:") {
        return female(label).ok_or_else(|| shock_error(spec, "unknown female type"));
    }
    match (male(target), female(target)) {
        (Some(k), None) | (None, Some(k)) => Ok(k),
        (Some(_), Some(_)) => Err(shock_error(
            spec,
            "label exists on both sides; write male:LABEL or female:LABEL",
        )),
        (None, None) => Err(shock_error(spec, "unknown type")),
    }
}

fn apply_shocks(file: &MarketFile, opts: &Options) -> Result<(MarketFile, Vec<ShockEntry>), Failure> {
    let mut shocked = file.clone();
    let mut entries = Vec::new();
    for spec in &opts.shock_nu {
        let (target, delta) = split_shock(spec)?;
        let k = population_index(file, spec, target)?;
        shocked.populations[k] += delta;
        entries.push(ShockEntry {
            target: format!("nu:{}", file.type_label(k)),
            delta,
        });
    }
    for spec in &opts.shock_pi {
        let (target, delta) = split_shock(spec)?;
        let (row, col) = target
            .split_once(',')
            .ok_or_else(|| shock_error(spec, "expected ROW,COL=DELTA"))?;
        let i = find_label(&file.male_types, row.trim()).ok_or_else(|| shock_error(spec, "unknown row"))?;
        let j = find_label(&file.female_types, col.trim()).ok_or_else(|| shock_error(spec, "unknown column"))?;
        shocked.gains[i][j] += delta;
        entries.push(ShockEntry {
            target: format!("{}:{},{}", file.gains_mode, file.male_types[i], file.female_types[j]),
            delta,
        });
    }
    shocked.validate()?;
    Ok((shocked, entries))
}

fn estimate_gains(opts: &Options) -> Result<EstimateBlock, Failure> {
    let input = opts.input.as_deref().ok_or_else(missing_input)?;
    let text = std::fs::read_to_string(input).map_err(|e| InputError::Io {
        path: input.display().to_string(),
        message: e.to_string(),
    })?;
    let observed = if text.trim_start().starts_with('{') {
        let report = ReportFile::from_json(&text)?;
        let eq = report
            .equilibrium
            .ok_or_else(|| InputError::Report("report has no equilibrium block".into()))?;
        ObservedDistribution {
            male_types: eq.male_types,
            female_types: eq.female_types,
            married: eq.married,
            single_men: eq.single_men,
            single_women: eq.single_women,
        }
    } else {
        parse_distribution_str(&text)?
    };
    Ok(EstimateBlock {
        log_gains: observed.log_gains(),
        gains: observed.gains(),
        male_types: observed.male_types,
        female_types: observed.female_types,
    })
}

fn item(name: &str, passed: bool, detail: String) -> CheckItem {
    CheckItem {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Monotonicity slack: exact zero derivatives are expected on degenerate
/// markets, and rounding may put them on either side.
fn monotone_floor(statics: &StaticsReport) -> f64 {
    if statics.boundary {
        -1e-9 * statics.r_matrix.amax()
    } else {
        0.0
    }
}

fn run_checks(eq: &Equilibrium, fd_step: f64) -> Result<CheckBlock, Failure> {
    let market = eq.market();
    let statics = statics_matrix(eq)?;
    let spectral = spectral_diagnostic(eq)?;
    let mut criteria = Vec::new();

    let clearing = eq.distribution().clearing_report(market);
    criteria.push(item(
        "clearing",
        clearing.holds(DEFAULT_CLEARING_TOLERANCE),
        format!(
            "row gap {:e}, column gap {:e}, identity gap {:e}, min entry {:e}",
            clearing.max_row_gap, clearing.max_column_gap, clearing.max_identity_gap, clearing.min_entry
        ),
    ));

    let radii: Vec<f64> = (0..7).map(|p| 10f64.powi(-p)).collect();
    let probe = probe_conjugate(eq, &radii)?;
    criteria.push(item(
        "duality",
        probe.holds(),
        format!(
            "H*(ν) = {:e}, best probe {:e} over {} points",
            probe.conjugate, probe.best_probe, probe.points
        ),
    ));

    let definite = statics.r_matrix.clone().cholesky().is_some();
    criteria.push(item(
        "r_positive_definite",
        definite,
        "Cholesky factorization of R".into(),
    ));

    let count = |kind: SignCheckKind| statics.sign_check.failures.iter().filter(|v| v.kind == kind).count();
    let sign_failures = count(SignCheckKind::CrossNegative) + count(SignCheckKind::SameSideBound);
    criteria.push(item(
        "sign_pattern",
        sign_failures == 0,
        format!("{sign_failures} violations, {:?} mode", statics.sign_check.mode).to_lowercase(),
    ));
    let cs_failures = count(SignCheckKind::CauchySchwarz);
    criteria.push(item(
        "cauchy_schwarz",
        cs_failures == 0,
        format!("{cs_failures} violations"),
    ));

    criteria.push(item(
        "spectral",
        spectral.pass,
        format!(
            "λ_max = {:e} after {} iterations",
            spectral.lambda_max, spectral.iterations
        ),
    ));

    let fd = finite_difference_check(market, fd_step)?;
    let worst = fd.max_relative_error();
    criteria.push(item(
        "finite_difference",
        worst <= FD_THRESHOLD,
        format!("max relative error {worst:e} at step {fd_step:e} (threshold {FD_THRESHOLD:e})"),
    ));

    let floor = monotone_floor(&statics);
    let transfers = transfer_analysis(eq, &statics, None)?;
    let (ni, nj, _) = transfers.transfer_derivatives.shape();
    let min_transfer = (0..ni)
        .flat_map(|i| (0..nj).map(move |j| (i, j)))
        .map(|(i, j)| *transfers.transfer_derivatives.get(i, j, i))
        .fold(f64::INFINITY, f64::min);
    let min_participation = participation_analysis(&statics)
        .iter()
        .map(|p| p.own_derivative)
        .fold(f64::INFINITY, f64::min);
    let strict = |x: f64| if statics.boundary { x >= floor } else { x > 0.0 };
    criteria.push(item(
        "monotonicity",
        strict(min_transfer) && strict(min_participation) && strict(fd.min_numeric_participation),
        format!(
            "min ∂τ_ij/∂ν_i = {min_transfer:e}, min ∂s_k/∂ν_k = {min_participation:e} (numeric {:e})",
            fd.min_numeric_participation
        ),
    ));

    let mut observations = Vec::new();
    if statics.boundary {
        observations.push(format!(
            "degenerate gains ({}); strict inequalities checked non-strictly, {} boundary cases",
            market
                .flags()
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", "),
            statics.sign_check.boundary_cases.len()
        ));
    }
    let probe = &statics.conjecture_probe;
    let failing = probe.observations.iter().filter(|o| !o.holds()).count();
    observations.push(format!(
        "conjecture probe (r_ii + r_i,I+j > 0 and r_I+j,I+j + r_I+j,i > 0): {} of {} pairs hold",
        probe.observations.len() - failing,
        probe.observations.len()
    ));

    let finite_difference = [
        ("substitution", &fd.substitution),
        ("gains", &fd.gains),
        ("elasticity", &fd.elasticity),
        ("transfer", &fd.transfer),
        ("participation", &fd.participation),
    ]
    .into_iter()
    .map(|(name, q)| FiniteDifferenceEntry::new(name, q))
    .collect();

    Ok(CheckBlock {
        passed: criteria.iter().all(|c| c.passed),
        criteria,
        finite_difference,
        observations,
    })
}
