//! Market data, validation, and the algebraic identities of the equilibrium
//! system.
//!
//! Index convention: a market with `I` male types and `J` female types is
//! described by amplitudes, populations and residuals of length `I + J`,
//! with the male types first. Amplitude `beta[k]` is the square root of the
//! number of singles of type `k`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest admissible `|b_k|` for log-amplitudes.
///
/// `e^{2b}` stays well inside the double exponent range below this bound.
pub const MAX_LOG_AMPLITUDE: f64 = 350.0;

/// Default relative tolerance for clearing and identity checks.
pub const DEFAULT_CLEARING_TOLERANCE: f64 = 1e-9;

/// `|lhs - rhs| / max(1, |rhs|)`.
pub fn relative_gap(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / rhs.abs().max(1.0)
}

/// Exponentiated total gains `Π_ij = e^{π_ij}` for each marriage type.
#[derive(Debug, Clone, PartialEq)]
pub struct GainsMatrix {
    entries: DMatrix<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl GainsMatrix {
    /// Builds a gains matrix with generated labels `m1..mI` and `f1..fJ`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let rows = (1..=entries.nrows()).map(|i| format!("m{i}")).collect();
        let cols = (1..=entries.ncols()).map(|j| format!("f{j}")).collect();
        Self::with_labels(entries, rows, cols)
    }

    pub fn with_labels(entries: DMatrix<f64>, row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "gains matrix must be at least 1x1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if row_labels.len() != entries.nrows() || col_labels.len() != entries.ncols() {
            return Err(Error::Dimension(format!(
                "gains matrix is {}x{} but {} row and {} column labels were given",
                entries.nrows(),
                entries.ncols(),
                row_labels.len(),
                col_labels.len()
            )));
        }
        for i in 0..entries.nrows() {
            for j in 0..entries.ncols() {
                let value = entries[(i, j)];
                if !value.is_finite() || value < 0.0 {
                    return Err(Error::InvalidGains { row: i, col: j, value });
                }
            }
        }
        Ok(Self {
            entries,
            row_labels,
            col_labels,
        })
    }

    /// Row-major construction from nested vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
            return Err(Error::Dimension(format!(
                "gains row {bad} has {} entries, expected {ncols}",
                rows[bad].len()
            )));
        }
        Self::new(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    /// Exponentiates log-gains `π_ij` into `Π_ij = e^{π_ij}`.
    pub fn from_log_gains(log_gains: &DMatrix<f64>, row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        Self::with_labels(log_gains.map(f64::exp), row_labels, col_labels)
    }

    pub fn zeros(male_types: usize, female_types: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(male_types, female_types))
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn male_types(&self) -> usize {
        self.entries.nrows()
    }

    pub fn female_types(&self) -> usize {
        self.entries.ncols()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Copy with a single entry replaced, re-validated.
    pub fn with_entry(&self, i: usize, j: usize, value: f64) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries[(i, j)] = value;
        Self::with_labels(entries, self.row_labels.clone(), self.col_labels.clone())
    }

    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.male_types())
            .filter(|&i| self.entries.row(i).iter().all(|&v| v == 0.0))
            .collect()
    }

    pub fn zero_cols(&self) -> Vec<usize> {
        (0..self.female_types())
            .filter(|&j| self.entries.column(j).iter().all(|&v| v == 0.0))
            .collect()
    }
}

/// Population counts `ν = [m | f]`; every entry strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector {
    counts: Vec<f64>,
}

impl PopulationVector {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Dimension("population vector is empty".into()));
        }
        if let Some((index, &value)) = counts.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidPopulation { index, value });
        }
        Ok(Self { counts })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.counts.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Copy with entry `k` replaced, re-validated.
    pub fn with_entry(&self, k: usize, value: f64) -> Result<Self> {
        let mut counts = self.counts.clone();
        counts[k] = value;
        Self::new(counts)
    }
}

/// Non-fatal observations about a market that passed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarketFlag {
    /// Row `i` (0-based) of Π is identically zero.
    ZeroRow(usize),
    /// Column `j` (0-based) of Π is identically zero.
    ZeroColumn(usize),
}

impl fmt::Display for MarketFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarketFlag::ZeroRow(i) => write!(f, "row {} of Π is zero", i + 1),
            MarketFlag::ZeroColumn(j) => write!(f, "column {} of Π is zero", j + 1),
        }
    }
}

/// A gains matrix and population vector with consistent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedMarket {
    gains: GainsMatrix,
    population: PopulationVector,
    flags: Vec<MarketFlag>,
}

/// Checks dimensions and flags vanishing rows or columns of Π.
///
/// Zero rows and columns are accepted: the equilibrium still exists and is
/// unique, only the strict sign structure of the statics degrades.
pub fn validate_market(gains: GainsMatrix, population: PopulationVector) -> Result<ValidatedMarket> {
    let dim = gains.male_types() + gains.female_types();
    if population.len() != dim {
        return Err(Error::Dimension(format!(
            "gains matrix is {}x{} so the population needs {dim} entries, got {}",
            gains.male_types(),
            gains.female_types(),
            population.len()
        )));
    }
    let flags = gains
        .zero_rows()
        .into_iter()
        .map(MarketFlag::ZeroRow)
        .chain(gains.zero_cols().into_iter().map(MarketFlag::ZeroColumn))
        .collect();
    Ok(ValidatedMarket {
        gains,
        population,
        flags,
    })
}

impl ValidatedMarket {
    pub fn gains(&self) -> &GainsMatrix {
        &self.gains
    }

    pub fn population(&self) -> &PopulationVector {
        &self.population
    }

    pub fn flags(&self) -> &[MarketFlag] {
        &self.flags
    }

    /// True when some row or column of Π vanishes.
    pub fn is_degenerate(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn male_types(&self) -> usize {
        self.gains.male_types()
    }

    pub fn female_types(&self) -> usize {
        self.gains.female_types()
    }

    pub fn dim(&self) -> usize {
        self.male_types() + self.female_types()
    }

    /// Labels for all `I + J` types, men first.
    pub fn type_labels(&self) -> Vec<String> {
        self.gains
            .row_labels()
            .iter()
            .chain(self.gains.col_labels())
            .cloned()
            .collect()
    }
}

/// Square roots of the singles counts and their logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeVector {
    beta: Vec<f64>,
    log_beta: Vec<f64>,
}

impl AmplitudeVector {
    pub fn from_beta(beta: Vec<f64>) -> Result<Self> {
        if let Some(index) = beta.iter().position(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::Options(format!(
                "amplitude {index} = {} is not strictly positive",
                beta[index]
            )));
        }
        let log_beta = beta.iter().map(|b| b.ln()).collect();
        Ok(Self { beta, log_beta })
    }

    pub fn from_log(log_beta: Vec<f64>) -> Result<Self> {
        if let Some(index) = log_beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::Options(format!("log-amplitude {index} is not finite")));
        }
        let beta = log_beta.iter().map(|b| b.exp()).collect();
        Ok(Self { beta, log_beta })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn log_beta(&self) -> &[f64] {
        &self.log_beta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// Singles counts `β_k²`.
    pub fn singles(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b * b).collect()
    }
}

/// Left-hand sides of the quadratic equilibrium system:
/// `β_k² + Σ_l Π β_k β_l − ν_k` with `l` ranging over the opposite sex.
pub fn residual(beta: &AmplitudeVector, market: &ValidatedMarket) -> Vec<f64> {
    let (ni, nj) = (market.male_types(), market.female_types());
    let b = beta.beta();
    let pi = market.gains().entries();
    let nu = market.population().as_slice();
    let mut out: Vec<f64> = b.iter().zip(nu).map(|(bk, nk)| bk * bk - nk).collect();
    for i in 0..ni {
        for j in 0..nj {
            let marriages = pi[(i, j)] * b[i] * b[ni + j];
            out[i] += marriages;
            out[ni + j] += marriages;
        }
    }
    out
}

/// Married couples and singles of every type.
#[derive(Debug, Clone, PartialEq)]
pub struct MaritalDistribution {
    pub married: DMatrix<f64>,
    pub single_men: Vec<f64>,
    pub single_women: Vec<f64>,
}

/// Worst violations of the clearing and equilibrium identities, each measured
/// with [`relative_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearingReport {
    pub max_row_gap: f64,
    pub max_column_gap: f64,
    pub max_identity_gap: f64,
    pub min_entry: f64,
}

impl ClearingReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_row_gap <= tol && self.max_column_gap <= tol && self.max_identity_gap <= tol && self.min_entry >= 0.0
    }
}

impl MaritalDistribution {
    pub fn male_totals(&self) -> Vec<f64> {
        self.single_men
            .iter()
            .enumerate()
            .map(|(i, s)| s + self.married.row(i).sum())
            .collect()
    }

    pub fn female_totals(&self) -> Vec<f64> {
        self.single_women
            .iter()
            .enumerate()
            .map(|(j, s)| s + self.married.column(j).sum())
            .collect()
    }

    /// Measures row clearing, column clearing and `μ_ij = Π_ij √(μ_i0 μ_0j)`.
    pub fn clearing_report(&self, market: &ValidatedMarket) -> ClearingReport {
        let nu = market.population().as_slice();
        let ni = market.male_types();
        let max_gap = |totals: Vec<f64>, offset: usize| {
            totals
                .iter()
                .enumerate()
                .map(|(k, t)| relative_gap(*t, nu[offset + k]))
                .fold(0.0, f64::max)
        };
        let pi = market.gains().entries();
        let mut identity = 0.0_f64;
        for i in 0..self.married.nrows() {
            for j in 0..self.married.ncols() {
                let predicted = pi[(i, j)] * (self.single_men[i] * self.single_women[j]).sqrt();
                identity = identity.max(relative_gap(self.married[(i, j)], predicted));
            }
        }
        let min_entry = self
            .married
            .iter()
            .chain(&self.single_men)
            .chain(&self.single_women)
            .copied()
            .fold(f64::INFINITY, f64::min);
        ClearingReport {
            max_row_gap: max_gap(self.male_totals(), 0),
            max_column_gap: max_gap(self.female_totals(), ni),
            max_identity_gap: identity,
            min_entry,
        }
    }
}

/// `μ_ij = β_i β_{I+j} Π_ij`, `μ_i0 = β_i²`, `μ_0j = β_{I+j}²`.
pub fn marriage_distribution(beta: &AmplitudeVector, gains: &GainsMatrix) -> MaritalDistribution {
    let ni = gains.male_types();
    let b = beta.beta();
    let married = DMatrix::from_fn(ni, gains.female_types(), |i, j| b[i] * b[ni + j] * gains.get(i, j));
    MaritalDistribution {
        married,
        single_men: b[..ni].iter().map(|x| x * x).collect(),
        single_women: b[ni..].iter().map(|x| x * x).collect(),
    }
}

/// `E(β) = ½Σβ_k² + ΣΣ Π_ij β_i β_{I+j} − Σ ν_k log|β_k|`, `+∞` when any
/// `β_k` vanishes.
pub fn objective_e(beta: &[f64], market: &ValidatedMarket) -> f64 {
    if beta.contains(&0.0) {
        return f64::INFINITY;
    }
    let ni = market.male_types();
    let pi = market.gains().entries();
    let nu = market.population().as_slice();
    let mut value = 0.0;
    for (bk, nk) in beta.iter().zip(nu) {
        value += 0.5 * bk * bk - nk * bk.abs().ln();
    }
    for i in 0..ni {
        for j in 0..market.female_types() {
            value += pi[(i, j)] * beta[i] * beta[ni + j];
        }
    }
    value
}

/// Value, gradient and Hessian of
/// `H(b) = ½Σ e^{2b_k} + ΣΣ Π_ij e^{b_i + b_{I+j}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HEvaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Rejects log-amplitudes whose exponentials would leave the safe range.
pub fn check_scale(b: &[f64]) -> Result<()> {
    match b.iter().position(|v| v.is_nan() || v.abs() > MAX_LOG_AMPLITUDE) {
        Some(index) => Err(Error::Scaling {
            index,
            value: b[index],
            bound: MAX_LOG_AMPLITUDE,
        }),
        None => Ok(()),
    }
}

/// `H(b)` alone, for line searches.
pub fn objective_h_value(b: &[f64], gains: &GainsMatrix) -> Result<f64> {
    check_scale(b)?;
    let ni = gains.male_types();
    let mut value: f64 = b.iter().map(|bk| 0.5 * (2.0 * bk).exp()).sum();
    for i in 0..ni {
        for j in 0..gains.female_types() {
            let p = gains.get(i, j);
            if p > 0.0 {
                value += p * (b[i] + b[ni + j]).exp();
            }
        }
    }
    Ok(value)
}

pub fn objective_h(b: &[f64], gains: &GainsMatrix) -> Result<HEvaluation> {
    let dim = gains.male_types() + gains.female_types();
    if b.len() != dim {
        return Err(Error::Dimension(format!(
            "expected {dim} log-amplitudes, got {}",
            b.len()
        )));
    }
    check_scale(b)?;
    let ni = gains.male_types();
    let mut value = 0.0;
    let mut gradient = DVector::zeros(dim);
    let mut hessian = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let sq = (2.0 * b[k]).exp();
        value += 0.5 * sq;
        gradient[k] = sq;
        hessian[(k, k)] = 2.0 * sq;
    }
    for i in 0..ni {
        for j in 0..gains.female_types() {
            let p = gains.get(i, j);
            if p == 0.0 {
                continue;
            }
            let f = ni + j;
            let term = p * (b[i] + b[f]).exp();
            value += term;
            gradient[i] += term;
            gradient[f] += term;
            hessian[(i, i)] += term;
            hessian[(f, f)] += term;
            hessian[(i, f)] = term;
            hessian[(f, i)] = term;
        }
    }
    Ok(HEvaluation {
        value,
        gradient,
        hessian,
    })
}

/// The middle factor `[[Δ_I, Π], [Πᵀ, Δ_J]]` of `D²H = Δ · M · Δ`, with
/// `Δ = diag(β)` and `(Δ_I)_ii = 2 + Σ_j Π_ij β_{I+j} / β_i`.
pub fn conjugated_hessian(beta: &AmplitudeVector, gains: &GainsMatrix) -> DMatrix<f64> {
    let ni = gains.male_types();
    let dim = beta.len();
    let b = beta.beta();
    let mut m = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        m[(k, k)] = 2.0;
    }
    for i in 0..ni {
        for j in 0..gains.female_types() {
            let p = gains.get(i, j);
            let f = ni + j;
            m[(i, i)] += p * b[f] / b[i];
            m[(f, f)] += p * b[i] / b[f];
            m[(i, f)] = p;
            m[(f, i)] = p;
        }
    }
    m
}
