//! Consistency checks between `H` and its convex conjugate
//! `H*(ν) = sup_b ⟨ν, b⟩ − H(b)`.

use crate::error::Result;
use crate::model::{objective_h_value, validate_market, ValidatedMarket};
use crate::solver::{solve, Equilibrium, SolverOptions};

/// `⟨ν, b⟩ − H(b)`.
pub fn dual_objective(b: &[f64], market: &ValidatedMarket) -> Result<f64> {
    let inner: f64 = b.iter().zip(market.population().as_slice()).map(|(x, n)| x * n).sum();
    Ok(inner - objective_h_value(b, market.gains())?)
}

/// Value of the conjugate at the market's population, `H*(ν)`.
pub fn conjugate_value(eq: &Equilibrium) -> f64 {
    -eq.objective_value()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateProbe {
    pub conjugate: f64,
    pub best_probe: f64,
    pub points: usize,
}

impl ConjugateProbe {
    /// No probed point beats the claimed supremum beyond `1e-8 (1 + |H*|)`.
    pub fn holds(&self) -> bool {
        self.best_probe <= self.conjugate + 1e-8 * (1.0 + self.conjugate.abs())
    }
}

/// Evaluates `⟨ν, b⟩ − H(b)` on a refining grid of coordinate and
/// pairwise-diagonal offsets around the solution.
pub fn probe_conjugate(eq: &Equilibrium, radii: &[f64]) -> Result<ConjugateProbe> {
    let market = eq.market();
    let center = eq.amplitudes().log_beta();
    let dim = center.len();
    let mut best = f64::NEG_INFINITY;
    let mut points = 0;
    let mut visit = |offsets: &[(usize, f64)]| -> Result<()> {
        let mut b = center.to_vec();
        for &(k, d) in offsets {
            b[k] += d;
        }
        best = best.max(dual_objective(&b, market)?);
        points += 1;
        Ok(())
    };
    for &r in radii {
        for k in 0..dim {
            visit(&[(k, r)])?;
            visit(&[(k, -r)])?;
            let d = r / std::f64::consts::SQRT_2;
            for l in (k + 1)..dim {
                for (sk, sl) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    visit(&[(k, sk * d), (l, sl * d)])?;
                }
            }
        }
    }
    Ok(ConjugateProbe {
        conjugate: conjugate_value(eq),
        best_probe: best,
        points,
    })
}

/// Central differences of `H*` in `ν`, which should reproduce the
/// log-amplitudes `b = DH*(ν)`. Returns the largest absolute deviation.
pub fn conjugate_gradient_gap(eq: &Equilibrium, relative_step: f64, opts: &SolverOptions) -> Result<f64> {
    let market = eq.market();
    let b = eq.amplitudes().log_beta();
    let mut worst = 0.0_f64;
    for (k, &bk) in b.iter().enumerate() {
        let nu_k = market.population().as_slice()[k];
        let h = relative_step * nu_k;
        let at = |value: f64| -> Result<f64> {
            let population = market.population().with_entry(k, value)?;
            let shifted = validate_market(market.gains().clone(), population)?;
            Ok(conjugate_value(&solve(&shifted, opts)?))
        };
        let derivative = (at(nu_k + h)? - at(nu_k - h)?) / (2.0 * h);
        worst = worst.max((derivative - bk).abs());
    }
    Ok(worst)
}
