//! Equilibrium, comparative statics and choice simulation for the
//! Choo–Siow marriage matching model.
//!
//! Given a non-negative gains matrix `Π` (`I` male types by `J` female types)
//! and positive type counts `ν = [m | f]`, the equilibrium singles amplitudes
//! `β` solve
//!
//! ```text
//! β_i² + Σ_j Π_ij β_i β_{I+j} = m_i,    β_{I+j}² + Σ_i Π_ij β_i β_{I+j} = f_j,
//! ```
//!
//! and the marriages follow as `μ_ij = Π_ij β_i β_{I+j}`. The solution is the
//! unique minimizer of the strictly convex `b ↦ H(b) − ⟨ν, b⟩` in log
//! coordinates `b = log β`, which [`solver::solve`] finds by damped Newton.
//!
//! ```
//! use choo_siow::{solve, validate_market, GainsMatrix, PopulationVector, SolverOptions};
//!
//! let gains = GainsMatrix::from_rows(&[vec![1.0]]).unwrap();
//! let population = PopulationVector::new(vec![100.0, 100.0]).unwrap();
//! let market = validate_market(gains, population).unwrap();
//! let eq = solve(&market, &SolverOptions::default()).unwrap();
//! assert!((eq.distribution().married[(0, 0)] - 50.0).abs() < 1e-9);
//! ```

pub mod choice;
pub mod cli;
pub mod duality;
pub mod error;
pub mod io;
pub mod model;
pub mod solver;
pub mod spectral;
pub mod statics;

pub use error::{Error, Result};
pub use model::{
    marriage_distribution, objective_e, objective_h, residual, validate_market, AmplitudeVector, GainsMatrix,
    MaritalDistribution, PopulationVector, ValidatedMarket,
};
pub use solver::{initial_guess, reduce_unpopulated, solve, solve_from, Equilibrium, SolverOptions};
pub use statics::{statics_matrix, StaticsReport};
