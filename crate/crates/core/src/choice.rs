//! Gumbel random-utility choice: sampling, logit probabilities, the
//! zero-noise limit, and Monte Carlo checks of an equilibrium's implied
//! choice frequencies.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::solver::Equilibrium;

/// Euler–Mascheroni constant, the mean of a standard Gumbel variable.
pub const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

/// Variance of a standard Gumbel variable, `π²/6`.
pub const GUMBEL_VARIANCE: f64 = std::f64::consts::PI * std::f64::consts::PI / 6.0;

/// The deterministic generator used for every seeded simulation.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Inverse CDF of `F(x) = exp(−exp(−x))`.
pub fn gumbel_quantile(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `F(x) = exp(−exp(−x))`.
pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// One standard Gumbel draw, `−log(−log U)` with `U` uniform on `(0, 1)`.
pub fn gumbel_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    gumbel_quantile(rng.sample(Open01))
}

/// Systematic utilities of one decision-maker type over the alternatives
/// `0..=J` (alternative 0 is staying single) and the noise scale `σ`.
///
/// A utility of `−∞` marks an alternative that is never chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceModel {
    utilities: Vec<f64>,
    sigma: f64,
}

impl ChoiceModel {
    pub fn new(utilities: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::ChoiceModel(format!(
                "sigma = {sigma} must be positive and finite"
            )));
        }
        if utilities.iter().any(|u| u.is_nan() || *u == f64::INFINITY) {
            return Err(Error::ChoiceModel("utilities must be finite or -inf".into()));
        }
        if !utilities.iter().any(|u| u.is_finite()) {
            return Err(Error::ChoiceModel("at least one alternative must be available".into()));
        }
        Ok(Self { utilities, sigma })
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alternatives(&self) -> usize {
        self.utilities.len()
    }
}

/// Softmax of `η/σ`, with the maximum subtracted before exponentiating.
pub fn choice_probabilities(model: &ChoiceModel) -> Vec<f64> {
    let top = model.utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = model
        .utilities
        .iter()
        .map(|u| ((u - top) / model.sigma).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// The `σ → 0` limit: equal mass on every maximizer of `η`.
pub fn sigma_limit(model: &ChoiceModel) -> Vec<f64> {
    let top = model.utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners = model.utilities.iter().filter(|&&u| u == top).count() as f64;
    model
        .utilities
        .iter()
        .map(|&u| if u == top { 1.0 / winners } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    pub sample_count: u64,
    /// Mean of every standard Gumbel perturbation drawn.
    pub sample_mean: f64,
    /// Unbiased variance of the same perturbations.
    pub sample_variance: f64,
    pub seed: Option<u64>,
}

/// Seeded Monte Carlo of `n` independent agents.
pub fn simulate_choices(model: &ChoiceModel, n: u64, seed: u64) -> Result<SimulationResult> {
    let mut result = simulate_choices_with(model, n, &mut seeded_rng(seed))?;
    result.seed = Some(seed);
    Ok(result)
}

/// Each agent draws one Gumbel perturbation per alternative and picks the
/// argmax of `η + σε`; ties go to the lowest index.
pub fn simulate_choices_with<R: Rng + ?Sized>(model: &ChoiceModel, n: u64, rng: &mut R) -> Result<SimulationResult> {
    if n == 0 {
        return Err(Error::ChoiceModel("sample count must be positive".into()));
    }
    let mut counts = vec![0u64; model.alternatives()];
    // Welford accumulators over all draws.
    let (mut draws, mut mean, mut m2) = (0u64, 0.0, 0.0);
    for _ in 0..n {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (index, &eta) in model.utilities.iter().enumerate() {
            let eps = gumbel_sample(rng);
            draws += 1;
            let delta = eps - mean;
            mean += delta / draws as f64;
            m2 += delta * (eps - mean);
            let value = eta + model.sigma * eps;
            if value > best.0 {
                best = (value, index);
            }
        }
        counts[best.1] += 1;
    }
    let frequencies = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let sample_variance = if draws > 1 { m2 / (draws - 1) as f64 } else { 0.0 };
    Ok(SimulationResult {
        counts,
        frequencies,
        sample_count: n,
        sample_mean: mean,
        sample_variance,
        seed: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Side {
    Male,
    Female,
}

/// Simulated against implied choice frequencies for one type.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeDivergence {
    pub side: Side,
    /// Index within its side.
    pub index: usize,
    /// `μ/ν` over (single, partner types...).
    pub target: Vec<f64>,
    pub empirical: Vec<f64>,
    pub max_abs_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRecord {
    pub seed: u64,
    pub samples_per_type: u64,
    pub types: Vec<TypeDivergence>,
}

impl ConsistencyRecord {
    pub fn max_deviation(&self) -> f64 {
        self.types.iter().map(|t| t.max_abs_deviation).fold(0.0, f64::max)
    }
}

/// Utility differences implied by a solved market for one type, relative to
/// staying single: `log(μ_ij/μ_i0)` for men, `log(μ_ij/μ_0j)` for women.
pub fn implied_utilities(eq: &Equilibrium, side: &Side, index: usize) -> Vec<f64> {
    let d = eq.distribution();
    let (single, married): (f64, Vec<f64>) = match side {
        Side::Male => (d.single_men[index], d.married.row(index).iter().copied().collect()),
        Side::Female => (d.single_women[index], d.married.column(index).iter().copied().collect()),
    };
    std::iter::once(0.0)
        .chain(
            married
                .iter()
                .map(|&m| if m > 0.0 { (m / single).ln() } else { f64::NEG_INFINITY }),
        )
        .collect()
}

/// Simulates every type's choices under its implied utilities (σ = 1) and
/// compares the frequencies with `μ/ν`.
///
/// Only utility differences are reconstructed; levels are not identified.
pub fn equilibrium_consistency(eq: &Equilibrium, samples_per_type: u64, seed: u64) -> Result<ConsistencyRecord> {
    let mut rng = seeded_rng(seed);
    let market = eq.market();
    let nu = market.population().as_slice();
    let d = eq.distribution();
    let ni = market.male_types();
    let mut types = Vec::with_capacity(market.dim());
    let sides = (0..ni)
        .map(|i| (Side::Male, i))
        .chain((0..market.female_types()).map(|j| (Side::Female, j)));
    for (side, index) in sides {
        let model = ChoiceModel::new(implied_utilities(eq, &side, index), 1.0)?;
        let target: Vec<f64> = match side {
            Side::Male => std::iter::once(d.single_men[index])
                .chain(d.married.row(index).iter().copied())
                .map(|m| m / nu[index])
                .collect(),
            Side::Female => std::iter::once(d.single_women[index])
                .chain(d.married.column(index).iter().copied())
                .map(|m| m / nu[ni + index])
                .collect(),
        };
        let sim = simulate_choices_with(&model, samples_per_type, &mut rng)?;
        let max_abs_deviation = target
            .iter()
            .zip(&sim.frequencies)
            .map(|(t, f)| (t - f).abs())
            .fold(0.0, f64::max);
        types.push(TypeDivergence {
            side,
            index,
            target,
            empirical: sim.frequencies,
            max_abs_deviation,
        });
    }
    Ok(ConsistencyRecord {
        seed,
        samples_per_type,
        types,
    })
}
