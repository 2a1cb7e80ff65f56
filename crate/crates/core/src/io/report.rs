//! The JSON report written by every subcommand.
//!
//! Field names are stable within a `format_version`; readers reject other
//! versions. Floats are written in shortest round-trip form, so a report
//! parses back into an equal [`ReportFile`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::InputError;
use crate::choice::{ConsistencyRecord, Side};
use crate::solver::{Equilibrium, TypeReduction};
use crate::statics::{
    gains_sensitivity, marriage_elasticity, participation_analysis, QuantityError, SignCheck, SignCheckKind,
    SignViolation, SpectralDiagnostic, StaticsReport, TransferReport,
};

pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: String,
    pub command: String,
    pub settings: Settings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputEcho>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<EquilibriumBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statics: Option<StaticsBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfers: Option<TransfersBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whatif: Option<WhatIfBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EstimateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBlock>,
}

impl ReportFile {
    pub fn new(command: &str, settings: Settings) -> Self {
        Self {
            format_version: REPORT_VERSION.to_string(),
            command: command.to_string(),
            settings,
            input: None,
            equilibrium: None,
            statics: None,
            transfers: None,
            whatif: None,
            simulation: None,
            check: None,
            estimate: None,
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports hold only finite numbers");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, InputError> {
        let report: Self = serde_json::from_str(text).map_err(|e| InputError::Report(e.to_string()))?;
        if report.format_version != REPORT_VERSION {
            return Err(InputError::Report(format!(
                "format_version {} is not supported (expected {REPORT_VERSION})",
                report.format_version
            )));
        }
        Ok(report)
    }
}

/// Tolerances and seeds in force for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub clearing_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEcho {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub male_types: Vec<String>,
    pub female_types: Vec<String>,
    pub gains_mode: String,
    pub gains: Vec<Vec<f64>>,
    pub populations: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingBlock {
    pub max_row_gap: f64,
    pub max_column_gap: f64,
    pub max_identity_gap: f64,
    pub min_entry: f64,
}

/// The solution in the original type numbering. Types with zero population
/// appear with no amplitude and zero counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumBlock {
    pub male_types: Vec<String>,
    pub female_types: Vec<String>,
    pub beta: Vec<Option<f64>>,
    pub log_beta: Vec<Option<f64>>,
    pub married: Vec<Vec<f64>>,
    pub single_men: Vec<f64>,
    pub single_women: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub objective: f64,
    pub clearing: ClearingBlock,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl EquilibriumBlock {
    pub fn new(eq: &Equilibrium, reduction: &TypeReduction, male_types: &[String], female_types: &[String]) -> Self {
        let beta = reduction.embed_amplitudes(eq.amplitudes().beta());
        let log_beta = reduction.embed_amplitudes(eq.amplitudes().log_beta());
        let distribution = reduction.embed_distribution(eq.distribution());
        let clearing = eq.distribution().clearing_report(eq.market());
        let notes = reduction
            .dropped()
            .into_iter()
            .map(|k| {
                let label = if k < male_types.len() { &male_types[k] } else { &female_types[k - male_types.len()] };
                format!("type `{label}` has zero population; it was excluded from the solve and is reported with zero counts")
            })
            .collect();
        Self {
            male_types: male_types.to_vec(),
            female_types: female_types.to_vec(),
            beta,
            log_beta,
            married: rows(&distribution.married),
            single_men: distribution.single_men,
            single_women: distribution.single_women,
            residual_norm: eq.residual_norm(),
            iterations: eq.iterations(),
            objective: eq.objective_value(),
            clearing: ClearingBlock {
                max_row_gap: clearing.max_row_gap,
                max_column_gap: clearing.max_column_gap,
                max_identity_gap: clearing.max_identity_gap,
                min_entry: clearing.min_entry,
            },
            flags: eq.market().flags().iter().map(ToString::to_string).collect(),
            notes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationEntry {
    pub kind: String,
    pub k: String,
    pub l: String,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCheckBlock {
    pub mode: String,
    pub passed: bool,
    pub checked: usize,
    pub failures: Vec<ViolationEntry>,
    pub boundary_cases: Vec<ViolationEntry>,
}

impl SignCheckBlock {
    pub fn new(check: &SignCheck, labels: &[String]) -> Self {
        let entry = |v: &SignViolation| ViolationEntry {
            kind: match v.kind {
                SignCheckKind::CrossNegative => "cross_negative",
                SignCheckKind::SameSideBound => "same_side_bound",
                SignCheckKind::CauchySchwarz => "cauchy_schwarz",
            }
            .to_string(),
            k: labels[v.k].clone(),
            l: labels[v.l].clone(),
            value: v.value,
            bound: v.bound,
        };
        Self {
            mode: format!("{:?}", check.mode).to_lowercase(),
            passed: check.passed(),
            checked: check.checked,
            failures: check.failures.iter().map(entry).collect(),
            boundary_cases: check.boundary_cases.iter().map(entry).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBlock {
    pub lambda_max: f64,
    pub iterations: usize,
    pub pass: bool,
}

impl From<&SpectralDiagnostic> for SpectralBlock {
    fn from(d: &SpectralDiagnostic) -> Self {
        Self {
            lambda_max: d.lambda_max,
            iterations: d.iterations,
            pass: d.pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationEntry {
    pub label: String,
    pub non_participation: f64,
    pub own_derivative: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureEntry {
    pub male: String,
    pub female: String,
    pub male_sum: f64,
    pub female_sum: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjectureBlock {
    pub all_hold: bool,
    pub observations: Vec<ConjectureEntry>,
}

/// Comparative statics of the solved (populated) market; tensors are
/// indexed `[i][j][k]` with `k` over the listed `types`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticsBlock {
    pub types: Vec<String>,
    pub boundary: bool,
    pub r_matrix: Vec<Vec<f64>>,
    pub d_beta: Vec<Vec<f64>>,
    pub gains_sensitivity: Vec<Vec<Vec<f64>>>,
    pub gains_log_sensitivity: Vec<Vec<Vec<Option<f64>>>>,
    pub marriage_elasticity: Vec<Vec<Vec<Option<f64>>>>,
    pub participation: Vec<ParticipationEntry>,
    pub spectral: SpectralBlock,
    pub sign_check: SignCheckBlock,
    pub conjecture_probe: ConjectureBlock,
}

impl StaticsBlock {
    pub fn new(eq: &Equilibrium, report: &StaticsReport, spectral: &SpectralDiagnostic) -> Self {
        let labels = eq.market().type_labels();
        let ni = report.male_types;
        let sensitivity = gains_sensitivity(eq, report);
        let participation = participation_analysis(report)
            .iter()
            .zip(&labels)
            .map(|(p, label)| ParticipationEntry {
                label: label.clone(),
                non_participation: p.non_participation,
                own_derivative: p.own_derivative,
                monotone: p.monotone(),
            })
            .collect();
        let observations = report
            .conjecture_probe
            .observations
            .iter()
            .map(|o| ConjectureEntry {
                male: labels[o.male].clone(),
                female: labels[ni + o.female].clone(),
                male_sum: o.male_sum,
                female_sum: o.female_sum,
                holds: o.holds(),
            })
            .collect();
        Self {
            boundary: report.boundary,
            r_matrix: rows(&report.r_matrix),
            d_beta: rows(&report.d_beta),
            gains_sensitivity: sensitivity.d_beta.to_nested(),
            gains_log_sensitivity: sensitivity.d_log_beta.to_nested(),
            marriage_elasticity: marriage_elasticity(eq, report).to_nested(),
            participation,
            spectral: spectral.into(),
            sign_check: SignCheckBlock::new(&report.sign_check, &labels),
            conjecture_probe: ConjectureBlock {
                all_hold: report.conjecture_probe.all_hold(),
                observations,
            },
            types: labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransfersBlock {
    pub male_types: Vec<String>,
    pub female_types: Vec<String>,
    /// `log(μ_i0/μ_0j) = 2τ_ij + c_ij`, identified without `c`.
    pub transfer_index: Vec<Vec<f64>>,
    /// `∂τ_ij/∂ν_k`, `k` over male then female types.
    pub transfer_derivatives: Vec<Vec<Vec<f64>>>,
    pub own_abundance_monotone: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TransfersBlock {
    pub fn new(eq: &Equilibrium, transfers: &TransferReport) -> Self {
        let gains = eq.market().gains();
        Self {
            male_types: gains.row_labels().to_vec(),
            female_types: gains.col_labels().to_vec(),
            transfer_index: rows(&transfers.transfer_index),
            transfer_derivatives: transfers.transfer_derivatives.to_nested(),
            own_abundance_monotone: transfers.own_abundance_monotone(),
            tau: transfers.tau.as_ref().map(rows),
            note: transfers
                .tau
                .is_none()
                .then(|| "τ is not identified without the exogenous c matrix; supply a [c] block".to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockEntry {
    pub target: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBlock {
    pub beta: Vec<Option<f64>>,
    pub married: Vec<Vec<f64>>,
    pub single_men: Vec<f64>,
    pub single_women: Vec<f64>,
}

impl DeltaBlock {
    pub fn between(baseline: &EquilibriumBlock, shocked: &EquilibriumBlock) -> Self {
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| y - x).collect::<Vec<_>>();
        Self {
            beta: baseline
                .beta
                .iter()
                .zip(&shocked.beta)
                .map(|(a, b)| Some((*b)? - (*a)?))
                .collect(),
            married: baseline
                .married
                .iter()
                .zip(&shocked.married)
                .map(|(a, b)| diff(a, b))
                .collect(),
            single_men: diff(&baseline.single_men, &shocked.single_men),
            single_women: diff(&baseline.single_women, &shocked.single_women),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfBlock {
    pub shocks: Vec<ShockEntry>,
    pub baseline: EquilibriumBlock,
    pub shocked: EquilibriumBlock,
    pub delta: DeltaBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedType {
    pub side: String,
    pub label: String,
    /// Alternatives: single first, then partner types in order.
    pub target: Vec<f64>,
    pub empirical: Vec<f64>,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationBlock {
    pub seed: u64,
    pub samples_per_type: u64,
    pub max_deviation: f64,
    pub types: Vec<SimulatedType>,
}

impl SimulationBlock {
    pub fn new(eq: &Equilibrium, record: &ConsistencyRecord) -> Self {
        let gains = eq.market().gains();
        Self {
            seed: record.seed,
            samples_per_type: record.samples_per_type,
            max_deviation: record.max_deviation(),
            types: record
                .types
                .iter()
                .map(|t| {
                    let (side, label) = match t.side {
                        Side::Male => ("male", &gains.row_labels()[t.index]),
                        Side::Female => ("female", &gains.col_labels()[t.index]),
                    };
                    SimulatedType {
                        side: side.to_string(),
                        label: label.clone(),
                        target: t.target.clone(),
                        empirical: t.empirical.clone(),
                        max_abs_deviation: t.max_abs_deviation,
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceEntry {
    pub quantity: String,
    /// Absent when the comparison overflowed.
    pub max_relative_error: Option<f64>,
    pub location: String,
    pub compared: usize,
}

impl FiniteDifferenceEntry {
    pub fn new(quantity: &str, q: &QuantityError) -> Self {
        Self {
            quantity: quantity.to_string(),
            max_relative_error: q.max_relative_error.is_finite().then_some(q.max_relative_error),
            location: q.location.clone(),
            compared: q.compared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckBlock {
    pub passed: bool,
    pub criteria: Vec<CheckItem>,
    pub finite_difference: Vec<FiniteDifferenceEntry>,
    /// Diagnostics that are reported but never fail the check.
    pub observations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateBlock {
    pub male_types: Vec<String>,
    pub female_types: Vec<String>,
    /// `π_ij`; absent where a count is zero.
    pub log_gains: Vec<Vec<Option<f64>>>,
    pub gains: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBlock {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}
