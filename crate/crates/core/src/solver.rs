//! Damped Newton minimization of `b ↦ H(b) − ⟨ν, b⟩`.
//!
//! The objective is smooth and strictly convex on all of `R^{I+J}`, so its
//! unique critical point is the equilibrium. Each iteration solves the
//! Newton system with a Cholesky factorization of the closed-form Hessian and
//! backtracks until the Armijo condition holds.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    marriage_distribution, objective_h, objective_h_value, validate_market, AmplitudeVector, GainsMatrix, HEvaluation,
    MaritalDistribution, PopulationVector, ValidatedMarket,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once `‖∇H(b) − ν‖ ≤ gradient_tolerance · ‖ν‖`.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub line_search_shrink: f64,
    pub armijo_constant: f64,
    /// Cap on the ∞-norm of a Newton step in log-amplitude space.
    pub max_step: f64,
    /// Extra full Newton steps taken after convergence while they keep
    /// reducing the largest per-type relative residual `|g_k|/ν_k`.
    pub polish_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-10,
            max_iterations: 200,
            line_search_shrink: 0.5,
            armijo_constant: 1e-4,
            max_step: 10.0,
            polish_steps: 3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.gradient_tolerance > 0.0 && self.gradient_tolerance.is_finite()) {
            return Err(Error::Options("gradient_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Options("max_iterations must be positive".into()));
        }
        if !open_unit(self.line_search_shrink) {
            return Err(Error::Options("line_search_shrink must lie in (0, 1)".into()));
        }
        if !open_unit(self.armijo_constant) {
            return Err(Error::Options("armijo_constant must lie in (0, 1)".into()));
        }
        if self.max_step.is_nan() || self.max_step <= 0.0 {
            return Err(Error::Options("max_step must be positive".into()));
        }
        Ok(())
    }
}

/// The solved market.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    amplitudes: AmplitudeVector,
    distribution: MaritalDistribution,
    market: ValidatedMarket,
    residual_norm: f64,
    iterations: usize,
    objective_value: f64,
    objective_trace: Vec<f64>,
}

impl Equilibrium {
    pub fn amplitudes(&self) -> &AmplitudeVector {
        &self.amplitudes
    }

    pub fn distribution(&self) -> &MaritalDistribution {
        &self.distribution
    }

    pub fn market(&self) -> &ValidatedMarket {
        &self.market
    }

    /// `‖∇H(b) − ν‖₂` at the returned iterate.
    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `H(b) − ⟨ν, b⟩` at the solution, which equals `−H*(ν)`.
    pub fn objective_value(&self) -> f64 {
        self.objective_value
    }

    /// Objective after every accepted step, starting with the initial guess.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }
}

/// `b0_k = ½ log ν_k`, exact when Π vanishes.
pub fn initial_guess(population: &PopulationVector) -> Vec<f64> {
    population.as_slice().iter().map(|v| 0.5 * v.ln()).collect()
}

pub fn solve(market: &ValidatedMarket, opts: &SolverOptions) -> Result<Equilibrium> {
    solve_from(market, opts, &initial_guess(market.population()))
}

/// Runs the Newton iteration from an arbitrary starting point.
pub fn solve_from(market: &ValidatedMarket, opts: &SolverOptions, start: &[f64]) -> Result<Equilibrium> {
    opts.validate()?;
    if start.len() != market.dim() {
        return Err(Error::Dimension(format!(
            "starting point has {} entries, market has {} types",
            start.len(),
            market.dim()
        )));
    }
    let gains = market.gains();
    let nu = DVector::from_column_slice(market.population().as_slice());
    let target = opts.gradient_tolerance * nu.norm();

    let mut b = DVector::from_column_slice(start);
    let mut eval = objective_h(b.as_slice(), gains)?;
    let mut value = eval.value - nu.dot(&b);
    let mut grad = &eval.gradient - &nu;
    let mut trace = vec![value];
    let mut iterations = 0;

    while grad.norm() > target {
        if iterations == opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                residual_norm: grad.norm(),
            });
        }
        iterations += 1;
        let direction = newton_direction(&eval.hessian, &grad, opts.max_step).ok_or_else(|| Error::Factorization {
            iteration: iterations,
            iterate: b.as_slice().to_vec(),
        })?;
        let slope = grad.dot(&direction);

        let mut step = 1.0;
        let accepted = loop {
            let trial = &b + step * &direction;
            let trial_value = objective_h_value(trial.as_slice(), gains).map(|h| h - nu.dot(&trial));
            if let Ok(v) = trial_value {
                if v <= value + opts.armijo_constant * step * slope {
                    break Some(trial);
                }
                // Near the optimum the predicted decrease drops below the
                // rounding noise of the objective; judge by the residual.
                if v <= value + 1e-14 * value.abs().max(1.0) && step == 1.0 {
                    let trial_eval = objective_h(trial.as_slice(), gains)?;
                    if (&trial_eval.gradient - &nu).norm() < grad.norm() {
                        break Some(trial);
                    }
                }
            }
            step *= opts.line_search_shrink;
            if step < 1e-20 {
                break None;
            }
        };
        let Some(next) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                residual_norm: grad.norm(),
            });
        };
        b = next;
        eval = objective_h(b.as_slice(), gains)?;
        value = eval.value - nu.dot(&b);
        grad = &eval.gradient - &nu;
        trace.push(value);
    }

    for _ in 0..opts.polish_steps {
        if grad.norm() == 0.0 {
            break;
        }
        let Some(direction) = newton_direction(&eval.hessian, &grad, opts.max_step) else {
            break;
        };
        let trial = &b + &direction;
        let Ok(trial_eval) = objective_h(trial.as_slice(), gains) else {
            break;
        };
        let trial_grad = &trial_eval.gradient - &nu;
        if relative_residual(&trial_grad, &nu) >= relative_residual(&grad, &nu) {
            break;
        }
        b = trial;
        value = trial_eval.value - nu.dot(&b);
        eval = trial_eval;
        grad = trial_grad;
        trace.push(value);
    }

    let amplitudes = AmplitudeVector::from_log(b.as_slice().to_vec())?;
    let distribution = marriage_distribution(&amplitudes, gains);
    Ok(Equilibrium {
        amplitudes,
        distribution,
        market: market.clone(),
        residual_norm: grad.norm(),
        iterations,
        objective_value: value,
        objective_trace: trace,
    })
}

/// The norm criterion is dominated by the most populous types; this is
/// the per-type view used when polishing.
fn relative_residual(grad: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    grad.iter()
        .zip(nu.iter())
        .map(|(g, n)| (g / n).abs())
        .fold(0.0, f64::max)
}

fn newton_direction(hessian: &DMatrix<f64>, grad: &DVector<f64>, max_step: f64) -> Option<DVector<f64>> {
    let chol = Cholesky::new(hessian.clone())?;
    let mut direction = -chol.solve(grad);
    if !direction.iter().all(|v| v.is_finite()) {
        return None;
    }
    let largest = direction.amax();
    if largest > max_step {
        direction *= max_step / largest;
    }
    Some(direction)
}

/// Re-evaluates `H` at the equilibrium; handy for callers needing the Hessian.
pub fn hessian_at(eq: &Equilibrium) -> Result<HEvaluation> {
    objective_h(eq.amplitudes().log_beta(), eq.market().gains())
}

/// Maps a market with possibly unpopulated types onto the populated ones.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeReduction {
    pub kept_male: Vec<usize>,
    pub kept_female: Vec<usize>,
    pub original_male: usize,
    pub original_female: usize,
}

impl TypeReduction {
    pub fn is_identity(&self) -> bool {
        self.kept_male.len() == self.original_male && self.kept_female.len() == self.original_female
    }

    /// Original indices (men first, `I + J` numbering) of dropped types.
    pub fn dropped(&self) -> Vec<usize> {
        let men = (0..self.original_male).filter(|i| !self.kept_male.contains(i));
        let women = (0..self.original_female)
            .filter(|j| !self.kept_female.contains(j))
            .map(|j| self.original_male + j);
        men.chain(women).collect()
    }

    /// Amplitudes in the original numbering; dropped types have none.
    pub fn embed_amplitudes(&self, reduced: &[f64]) -> Vec<Option<f64>> {
        let mut out = vec![None; self.original_male + self.original_female];
        let ni = self.kept_male.len();
        for (r, &i) in self.kept_male.iter().enumerate() {
            out[i] = Some(reduced[r]);
        }
        for (r, &j) in self.kept_female.iter().enumerate() {
            out[self.original_male + j] = Some(reduced[ni + r]);
        }
        out
    }

    /// Distribution in the original shape; dropped types have zero singles
    /// and zero marriages.
    pub fn embed_distribution(&self, reduced: &MaritalDistribution) -> MaritalDistribution {
        let mut married = DMatrix::zeros(self.original_male, self.original_female);
        let mut single_men = vec![0.0; self.original_male];
        let mut single_women = vec![0.0; self.original_female];
        for (ri, &i) in self.kept_male.iter().enumerate() {
            single_men[i] = reduced.single_men[ri];
            for (rj, &j) in self.kept_female.iter().enumerate() {
                married[(i, j)] = reduced.married[(ri, rj)];
            }
        }
        for (rj, &j) in self.kept_female.iter().enumerate() {
            single_women[j] = reduced.single_women[rj];
        }
        MaritalDistribution {
            married,
            single_men,
            single_women,
        }
    }
}

/// Drops types with zero population and validates the remaining market.
pub fn reduce_unpopulated(gains: &GainsMatrix, raw_population: &[f64]) -> Result<(ValidatedMarket, TypeReduction)> {
    let (ni, nj) = (gains.male_types(), gains.female_types());
    if raw_population.len() != ni + nj {
        return Err(Error::Dimension(format!(
            "gains matrix is {ni}x{nj} so the population needs {} entries, got {}",
            ni + nj,
            raw_population.len()
        )));
    }
    if let Some((index, &value)) = raw_population
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(Error::InvalidPopulation { index, value });
    }
    let kept_male: Vec<usize> = (0..ni).filter(|&i| raw_population[i] > 0.0).collect();
    let kept_female: Vec<usize> = (0..nj).filter(|&j| raw_population[ni + j] > 0.0).collect();
    if kept_male.is_empty() && kept_female.is_empty() {
        return Err(Error::AllUnpopulated);
    }
    if kept_male.is_empty() || kept_female.is_empty() {
        return Err(Error::Dimension(
            "one side of the market is entirely unpopulated; no marriages are possible".into(),
        ));
    }
    let entries = DMatrix::from_fn(kept_male.len(), kept_female.len(), |r, c| {
        gains.get(kept_male[r], kept_female[c])
    });
    let rows = kept_male.iter().map(|&i| gains.row_labels()[i].clone()).collect();
    let cols = kept_female.iter().map(|&j| gains.col_labels()[j].clone()).collect();
    let reduced_gains = GainsMatrix::with_labels(entries, rows, cols)?;
    let counts = kept_male
        .iter()
        .map(|&i| raw_population[i])
        .chain(kept_female.iter().map(|&j| raw_population[ni + j]))
        .collect();
    let market = validate_market(reduced_gains, PopulationVector::new(counts)?)?;
    Ok((
        market,
        TypeReduction {
            kept_male,
            kept_female,
            original_male: ni,
            original_female: nj,
        },
    ))
}
