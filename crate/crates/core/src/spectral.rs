//! Power iteration for the Perron root of entrywise non-negative matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_POWER_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_POWER_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PerronRoot {
    pub eigenvalue: f64,
    pub eigenvector: DVector<f64>,
    pub iterations: usize,
}

/// Dominant eigenvalue of a square non-negative matrix.
///
/// Starts from the all-ones vector, which has a positive component along any
/// non-negative Perron vector, and stops once successive Rayleigh quotients
/// agree to `tolerance` relative.
pub fn perron_root(matrix: &DMatrix<f64>, tolerance: f64, max_iterations: usize) -> Result<PerronRoot> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return Err(Error::Dimension(format!(
            "power iteration needs a non-empty square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut previous = f64::NAN;
    for iteration in 1..=max_iterations {
        let y = matrix * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(PerronRoot {
                eigenvalue: 0.0,
                eigenvector: x,
                iterations: iteration,
            });
        }
        let rayleigh = x.dot(&y);
        x = y / norm;
        if (rayleigh - previous).abs() <= tolerance * rayleigh.abs() {
            return Ok(PerronRoot {
                eigenvalue: rayleigh,
                eigenvector: x,
                iterations: iteration,
            });
        }
        previous = rayleigh;
    }
    Err(Error::PowerIteration {
        iterations: max_iterations,
    })
}
