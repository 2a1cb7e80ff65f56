//! Comparative statics of the equilibrium.
//!
//! Everything here is derived from the substitution matrix
//! `r_kl = (1/β_k²) ∂β_k²/∂ν_l = 2 (D²H(b))⁻¹_kl` evaluated at the solution:
//! singles responses, gains sensitivities, marriage elasticities, transfer
//! indices and participation rates. The sign and bound structure of `R` is
//! verified at runtime, and [`finite_difference_check`] re-solves perturbed
//! markets as an independent oracle for every analytic derivative.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{validate_market, ValidatedMarket};
use crate::solver::{hessian_at, solve, Equilibrium, SolverOptions};
use crate::spectral::{perron_root, DEFAULT_POWER_ITERATIONS, DEFAULT_POWER_TOLERANCE};

/// Slack used when strict inequalities are downgraded on degenerate markets.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Dense `I × J × (I+J)` array indexed by marriage type and affected type.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeTensor<T> {
    male_types: usize,
    female_types: usize,
    depth: usize,
    data: Vec<T>,
}

impl<T> TypeTensor<T> {
    pub fn from_fn(
        male_types: usize,
        female_types: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(male_types * female_types * depth);
        for i in 0..male_types {
            for j in 0..female_types {
                for k in 0..depth {
                    data.push(f(i, j, k));
                }
            }
        }
        Self {
            male_types,
            female_types,
            depth,
            data,
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &T {
        &self.data[(i * self.female_types + j) * self.depth + k]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.male_types, self.female_types, self.depth)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }
}

impl<T: Clone> TypeTensor<T> {
    /// Nested `[i][j][k]` vectors.
    pub fn to_nested(&self) -> Vec<Vec<Vec<T>>> {
        (0..self.male_types)
            .map(|i| {
                (0..self.female_types)
                    .map(|j| (0..self.depth).map(|k| self.get(i, j, k).clone()).collect())
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// No row or column of Π vanishes; all inequalities are strict.
    Strict,
    /// Degenerate Π; inequalities are checked non-strictly.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignCheckKind {
    /// `r_kl < 0` for `k`, `l` on opposite sides of the market.
    CrossNegative,
    /// `½(β_k² + ν_k) r_kl > δ_kl` for `k`, `l` on the same side.
    SameSideBound,
    /// `r_kl² < r_kk r_ll` for `k ≠ l`.
    CauchySchwarz,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignViolation {
    pub kind: SignCheckKind,
    pub k: usize,
    pub l: usize,
    /// Left-hand side of the inequality.
    pub value: f64,
    /// Right-hand side of the inequality.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignCheck {
    pub mode: CheckMode,
    pub checked: usize,
    pub failures: Vec<SignViolation>,
    /// Comparisons that hold only as equalities (boundary mode only).
    pub boundary_cases: Vec<SignViolation>,
}

impl SignCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjectureObservation {
    pub male: usize,
    pub female: usize,
    /// `r_ii + r_{i,I+j}`.
    pub male_sum: f64,
    /// `r_{I+j,I+j} + r_{I+j,i}`.
    pub female_sum: f64,
}

impl ConjectureObservation {
    pub fn holds(&self) -> bool {
        self.male_sum > 0.0 && self.female_sum > 0.0
    }
}

/// Observations on diagonal dominance of `R` across the sexes. Never a
/// pass/fail criterion: the property is unproven.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjectureProbe {
    pub observations: Vec<ConjectureObservation>,
}

impl ConjectureProbe {
    pub fn all_hold(&self) -> bool {
        self.observations.iter().all(ConjectureObservation::holds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDiagnostic {
    /// Perron root of `A = Δ_I⁻¹ Π Δ_J⁻¹ Πᵀ`.
    pub lambda_max: f64,
    pub iterations: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticsReport {
    /// Symmetric positive definite substitution matrix `R`.
    pub r_matrix: DMatrix<f64>,
    /// `∂β_k/∂ν_l = β_k r_kl / 2`.
    pub d_beta: DMatrix<f64>,
    pub spectral_radius: f64,
    pub sign_check: SignCheck,
    pub conjecture_probe: ConjectureProbe,
    pub male_types: usize,
    pub female_types: usize,
    /// `β_k²`.
    pub singles: Vec<f64>,
    /// `ν_k`.
    pub population: Vec<f64>,
    /// Some row or column of Π vanishes.
    pub boundary: bool,
}

impl StaticsReport {
    pub fn r(&self, k: usize, l: usize) -> f64 {
        self.r_matrix[(k, l)]
    }

    pub fn dim(&self) -> usize {
        self.male_types + self.female_types
    }

    fn same_side(&self, k: usize, l: usize) -> bool {
        (k < self.male_types) == (l < self.male_types)
    }
}

/// Computes `R = 2 (D²H)⁻¹` and everything that depends only on it.
pub fn statics_matrix(eq: &Equilibrium) -> Result<StaticsReport> {
    let market = eq.market();
    let hessian = hessian_at(eq)?.hessian;
    let chol = Cholesky::new(hessian).ok_or_else(|| Error::Factorization {
        iteration: eq.iterations(),
        iterate: eq.amplitudes().log_beta().to_vec(),
    })?;
    let mut r_matrix = chol.inverse() * 2.0;
    let symmetric = (&r_matrix + r_matrix.transpose()) * 0.5;
    r_matrix = symmetric;
    let beta = eq.amplitudes().beta();
    let d_beta = DMatrix::from_fn(r_matrix.nrows(), r_matrix.ncols(), |k, l| {
        0.5 * beta[k] * r_matrix[(k, l)]
    });
    let spectral = spectral_diagnostic(eq)?;
    let mut report = StaticsReport {
        r_matrix,
        d_beta,
        spectral_radius: spectral.lambda_max,
        sign_check: SignCheck {
            mode: CheckMode::Strict,
            checked: 0,
            failures: vec![],
            boundary_cases: vec![],
        },
        conjecture_probe: ConjectureProbe { observations: vec![] },
        male_types: market.male_types(),
        female_types: market.female_types(),
        singles: eq.amplitudes().singles(),
        population: market.population().as_slice().to_vec(),
        boundary: market.is_degenerate(),
    };
    report.sign_check = verify_sign_pattern(&report);
    report.conjecture_probe = conjecture_probe(&report);
    Ok(report)
}

/// Checks the sign pattern and bounds that `R` must satisfy.
pub fn verify_sign_pattern(report: &StaticsReport) -> SignCheck {
    let mode = if report.boundary {
        CheckMode::Boundary
    } else {
        CheckMode::Strict
    };
    let mut check = SignCheck {
        mode,
        checked: 0,
        failures: vec![],
        boundary_cases: vec![],
    };
    // Records `value > bound` (strict) or `value ≥ bound − slack · scale`.
    let mut expect_greater = |kind, k, l, value: f64, bound: f64, scale: f64| {
        check.checked += 1;
        let violation = SignViolation {
            kind,
            k,
            l,
            value,
            bound,
        };
        match mode {
            CheckMode::Strict => {
                if value.is_nan() || value <= bound {
                    check.failures.push(violation);
                }
            }
            CheckMode::Boundary => {
                let slack = BOUNDARY_TOLERANCE * scale;
                if value < bound - slack {
                    check.failures.push(violation);
                } else if value <= bound + slack {
                    check.boundary_cases.push(violation);
                }
            }
        }
    };
    let n = report.dim();
    for k in 0..n {
        for l in 0..n {
            let r = report.r(k, l);
            let product = report.r(k, k) * report.r(l, l);
            if report.same_side(k, l) {
                let weight = 0.5 * (report.singles[k] + report.population[k]);
                let delta = if k == l { 1.0 } else { 0.0 };
                expect_greater(
                    SignCheckKind::SameSideBound,
                    k,
                    l,
                    weight * r,
                    delta,
                    weight * product.abs().sqrt(),
                );
            } else {
                expect_greater(SignCheckKind::CrossNegative, k, l, -r, 0.0, product.abs().sqrt());
            }
            if k != l {
                expect_greater(SignCheckKind::CauchySchwarz, k, l, product, r * r, product.abs());
            }
        }
    }
    check
}

/// `∂β_k/∂Π_ij` and, where `Π_ij > 0`, `∂ log β_k/∂Π_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainsSensitivity {
    pub d_beta: TypeTensor<f64>,
    pub d_log_beta: TypeTensor<Option<f64>>,
}

pub fn gains_sensitivity(eq: &Equilibrium, report: &StaticsReport) -> GainsSensitivity {
    let (ni, nj, n) = (report.male_types, report.female_types, report.dim());
    let beta = eq.amplitudes().beta();
    let gains = eq.market().gains();
    let married = &eq.distribution().married;
    let d_beta = TypeTensor::from_fn(ni, nj, n, |i, j, k| {
        -beta[i] * beta[ni + j] * (report.d_beta[(k, i)] + report.d_beta[(k, ni + j)])
    });
    let d_log_beta = TypeTensor::from_fn(ni, nj, n, |i, j, k| {
        let p = gains.get(i, j);
        (p > 0.0).then(|| -married[(i, j)] / (2.0 * p) * (report.r(k, i) + report.r(k, ni + j)))
    });
    GainsSensitivity { d_beta, d_log_beta }
}

/// `∂ log μ_ij/∂ν_k = ½(r_ik + r_{k,I+j})`, absent where `μ_ij = 0`.
pub fn marriage_elasticity(eq: &Equilibrium, report: &StaticsReport) -> TypeTensor<Option<f64>> {
    let (ni, nj, n) = (report.male_types, report.female_types, report.dim());
    let married = &eq.distribution().married;
    TypeTensor::from_fn(ni, nj, n, |i, j, k| {
        (married[(i, j)] > 0.0).then(|| 0.5 * (report.r(i, k) + report.r(k, ni + j)))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    /// `log(μ_i0/μ_0j) = 2τ_ij + c_ij`.
    pub transfer_index: DMatrix<f64>,
    /// `∂τ_ij/∂ν_k = ½(r_ik − r_{I+j,k})`.
    pub transfer_derivatives: TypeTensor<f64>,
    /// `τ_ij`, only when the exogenous `c_ij` is known.
    pub tau: Option<DMatrix<f64>>,
}

impl TransferReport {
    /// Own-abundance monotonicity: `∂τ_ij/∂ν_i > 0` for every `(i, j)`.
    pub fn own_abundance_monotone(&self) -> bool {
        let (ni, nj, _) = self.transfer_derivatives.shape();
        (0..ni).all(|i| (0..nj).all(|j| *self.transfer_derivatives.get(i, j, i) > 0.0))
    }
}

pub fn transfer_analysis(eq: &Equilibrium, report: &StaticsReport, c: Option<&DMatrix<f64>>) -> Result<TransferReport> {
    let (ni, nj, n) = (report.male_types, report.female_types, report.dim());
    let log_beta = eq.amplitudes().log_beta();
    let transfer_index = DMatrix::from_fn(ni, nj, |i, j| 2.0 * (log_beta[i] - log_beta[ni + j]));
    let transfer_derivatives = TypeTensor::from_fn(ni, nj, n, |i, j, k| 0.5 * (report.r(i, k) - report.r(ni + j, k)));
    let tau = match c {
        None => None,
        Some(c) if c.shape() == (ni, nj) => Some((&transfer_index - c) * 0.5),
        Some(c) => {
            return Err(Error::Dimension(format!(
                "c matrix is {}x{}, expected {ni}x{nj}",
                c.nrows(),
                c.ncols()
            )))
        }
    };
    Ok(TransferReport {
        transfer_index,
        transfer_derivatives,
        tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipationRecord {
    /// `s_k = β_k²/ν_k`, the fraction remaining single.
    pub non_participation: f64,
    /// `∂s_k/∂ν_k = (β_k²/ν_k²)(ν_k r_kk − 1)`.
    pub own_derivative: f64,
}

impl ParticipationRecord {
    pub fn monotone(&self) -> bool {
        self.own_derivative > 0.0
    }
}

pub fn participation_analysis(report: &StaticsReport) -> Vec<ParticipationRecord> {
    (0..report.dim())
        .map(|k| {
            let (s2, nu) = (report.singles[k], report.population[k]);
            ParticipationRecord {
                non_participation: s2 / nu,
                own_derivative: s2 / (nu * nu) * (nu * report.r(k, k) - 1.0),
            }
        })
        .collect()
}

/// `A = Δ_I⁻¹ Π Δ_J⁻¹ Πᵀ` with `(Δ)_kk = 1 + ν_k/β_k²` at the solution.
pub fn resolvent_operator(eq: &Equilibrium) -> DMatrix<f64> {
    let (di, dj) = block_diagonals(eq);
    let pi = eq.market().gains().entries();
    DMatrix::from_diagonal(&di.map(|d| 1.0 / d)) * pi * DMatrix::from_diagonal(&dj.map(|d| 1.0 / d)) * pi.transpose()
}

fn block_diagonals(eq: &Equilibrium) -> (DVector<f64>, DVector<f64>) {
    let ni = eq.market().male_types();
    let nu = eq.market().population().as_slice();
    let singles = eq.amplitudes().singles();
    let diag: Vec<f64> = nu.iter().zip(&singles).map(|(n, s)| 1.0 + n / s).collect();
    (
        DVector::from_column_slice(&diag[..ni]),
        DVector::from_column_slice(&diag[ni..]),
    )
}

/// Perron root of [`resolvent_operator`], which lies below one whenever no
/// row or column of Π vanishes.
///
/// Iterates on the symmetric similar matrix `C Cᵀ` with
/// `C = Δ_I^{-1/2} Π Δ_J^{-1/2}`; it is entrywise non-negative and shares
/// the spectrum of `A`.
pub fn spectral_diagnostic(eq: &Equilibrium) -> Result<SpectralDiagnostic> {
    let (di, dj) = block_diagonals(eq);
    let pi = eq.market().gains().entries();
    let c = DMatrix::from_fn(pi.nrows(), pi.ncols(), |i, j| pi[(i, j)] / (di[i] * dj[j]).sqrt());
    let root = perron_root(&(&c * c.transpose()), DEFAULT_POWER_TOLERANCE, DEFAULT_POWER_ITERATIONS)?;
    Ok(SpectralDiagnostic {
        lambda_max: root.eigenvalue,
        iterations: root.iterations,
        pass: root.eigenvalue < 1.0,
    })
}

pub fn conjecture_probe(report: &StaticsReport) -> ConjectureProbe {
    let ni = report.male_types;
    let observations = (0..ni)
        .flat_map(|i| {
            (0..report.female_types).map(move |j| ConjectureObservation {
                male: i,
                female: j,
                male_sum: report.r(i, i) + report.r(i, ni + j),
                female_sum: report.r(ni + j, ni + j) + report.r(ni + j, i),
            })
        })
        .collect();
    ConjectureProbe { observations }
}

/// Worst disagreement between an analytic derivative and its finite
/// difference estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantityError {
    pub max_relative_error: f64,
    /// Where the worst error occurred.
    pub location: String,
    pub compared: usize,
}

impl QuantityError {
    fn new() -> Self {
        Self {
            max_relative_error: 0.0,
            location: String::new(),
            compared: 0,
        }
    }

    /// Relative error, except that derivatives below `resolution` — the
    /// smallest value a difference quotient can distinguish from rounding
    /// noise — are compared against `resolution` instead.
    fn record(&mut self, analytic: f64, numeric: f64, resolution: f64, location: impl FnOnce() -> String) {
        let denom = analytic.abs().max(resolution).max(f64::MIN_POSITIVE);
        let err = (analytic - numeric).abs() / denom;
        self.compared += 1;
        if err > self.max_relative_error || !err.is_finite() {
            self.max_relative_error = if err.is_finite() { err } else { f64::INFINITY };
            self.location = location();
        }
    }
}

/// Relative accuracy assumed for every quantity of a re-solved market
/// (about 50 000 ulp). A difference quotient of `f` over a width `w` cannot
/// resolve derivatives much below `FD_RESOLUTION · |f| / w`.
pub const FD_RESOLUTION: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifferenceReport {
    pub step: f64,
    /// `r_kl` against differences of `β_k²` in `ν_l`.
    pub substitution: QuantityError,
    /// `∂β_k/∂Π_ij` against differences of `β_k` in `Π_ij`.
    pub gains: QuantityError,
    /// `∂ log μ_ij/∂ν_k` against differences of `log μ_ij`.
    pub elasticity: QuantityError,
    /// `∂τ_ij/∂ν_k` against half the differences of the transfer index.
    pub transfer: QuantityError,
    /// `∂s_k/∂ν_k` against differences of `β_k²/ν_k`.
    pub participation: QuantityError,
    /// Smallest finite-difference `∂τ_ij/∂ν_i`.
    pub min_numeric_own_transfer: f64,
    /// Smallest finite-difference `∂s_k/∂ν_k`.
    pub min_numeric_participation: f64,
}

impl FiniteDifferenceReport {
    pub fn max_relative_error(&self) -> f64 {
        [
            &self.substitution,
            &self.gains,
            &self.elasticity,
            &self.transfer,
            &self.participation,
        ]
        .iter()
        .map(|q| q.max_relative_error)
        .fold(0.0, f64::max)
    }
}

/// Solver settings used for the perturbed re-solves: converged to rounding.
pub fn oracle_solver_options() -> SolverOptions {
    SolverOptions {
        gradient_tolerance: 1e-13,
        max_iterations: 500,
        polish_steps: 5,
        ..SolverOptions::default()
    }
}

/// Re-solves the market at `ν_k(1 ± step)` and `Π_ij ± step(1 + Π_ij)` and
/// compares central differences with every analytic derivative.
///
/// When `Π_ij` is too small for a symmetric perturbation a forward
/// difference is used instead.
pub fn finite_difference_check(market: &ValidatedMarket, step: f64) -> Result<FiniteDifferenceReport> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::Options(format!(
            "finite-difference step {step} must lie in (0, 0.5)"
        )));
    }
    let opts = oracle_solver_options();
    let eq = solve(market, &opts)?;
    let report = statics_matrix(&eq)?;
    let gains_an = gains_sensitivity(&eq, &report);
    let elasticity_an = marriage_elasticity(&eq, &report);
    let transfer_an = transfer_analysis(&eq, &report, None)?;
    let participation_an = participation_analysis(&report);
    let (ni, nj, n) = (market.male_types(), market.female_types(), market.dim());

    let mut out = FiniteDifferenceReport {
        step,
        substitution: QuantityError::new(),
        gains: QuantityError::new(),
        elasticity: QuantityError::new(),
        transfer: QuantityError::new(),
        participation: QuantityError::new(),
        min_numeric_own_transfer: f64::INFINITY,
        min_numeric_participation: f64::INFINITY,
    };

    let nu = market.population().as_slice();
    for l in 0..n {
        let h = step * nu[l];
        let shifted = |value: f64| -> Result<Equilibrium> {
            let m = validate_market(market.gains().clone(), market.population().with_entry(l, value)?)?;
            solve(&m, &opts)
        };
        let (plus, minus) = (shifted(nu[l] + h)?, shifted(nu[l] - h)?);
        let diff = |f: &dyn Fn(&Equilibrium) -> f64| (f(&plus) - f(&minus)) / (2.0 * h);

        // Every compared quantity below is a logarithm or is normalized by
        // its own level, so one resolution serves them all.
        let resolution = FD_RESOLUTION / (2.0 * h);
        for k in 0..n {
            let d_singles = diff(&|e| e.amplitudes().singles()[k]);
            let numeric = d_singles / report.singles[k];
            out.substitution
                .record(report.r(k, l), numeric, resolution, || format!("r[{k}][{l}]"));
        }

        for i in 0..ni {
            for j in 0..nj {
                if let Some(analytic) = *elasticity_an.get(i, j, l) {
                    let numeric = diff(&|e| e.distribution().married[(i, j)].ln());
                    out.elasticity
                        .record(analytic, numeric, resolution, || format!("dlog mu[{i}][{j}]/dnu[{l}]"));
                }
                let numeric = 0.5 * diff(&|e| 2.0 * (e.amplitudes().log_beta()[i] - e.amplitudes().log_beta()[ni + j]));
                let analytic = *transfer_an.transfer_derivatives.get(i, j, l);
                out.transfer
                    .record(analytic, numeric, resolution, || format!("dtau[{i}][{j}]/dnu[{l}]"));
                if l == i {
                    out.min_numeric_own_transfer = out.min_numeric_own_transfer.min(numeric);
                }
            }
        }

        let share = |e: &Equilibrium, value: f64| e.amplitudes().singles()[l] / value;
        let numeric = (share(&plus, nu[l] + h) - share(&minus, nu[l] - h)) / (2.0 * h);
        let analytic = participation_an[l].own_derivative;
        let floor = resolution * report.singles[l] / nu[l];
        out.participation
            .record(analytic, numeric, floor, || format!("ds[{l}]/dnu[{l}]"));
        out.min_numeric_participation = out.min_numeric_participation.min(numeric);
    }

    for i in 0..ni {
        for j in 0..nj {
            let p = market.gains().get(i, j);
            let h = step * (1.0 + p);
            let shifted = |value: f64| -> Result<Equilibrium> {
                let m = validate_market(market.gains().with_entry(i, j, value)?, market.population().clone())?;
                solve(&m, &opts)
            };
            let (upper, lower, width) = if p >= h {
                (shifted(p + h)?, shifted(p - h)?, 2.0 * h)
            } else {
                (shifted(p + h)?, eq.clone(), h)
            };
            for k in 0..n {
                let beta = eq.amplitudes().beta()[k];
                let numeric = (upper.amplitudes().beta()[k] - lower.amplitudes().beta()[k]) / width;
                let analytic = *gains_an.d_beta.get(i, j, k);
                out.gains.record(analytic, numeric, FD_RESOLUTION * beta / width, || {
                    format!("dbeta[{k}]/dPi[{i}][{j}]")
                });
            }
        }
    }
    Ok(out)
}
