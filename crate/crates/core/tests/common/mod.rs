#![allow(dead_code)]

use choo_siow::{validate_market, GainsMatrix, PopulationVector, ValidatedMarket};
use nalgebra::DMatrix;
use rand::Rng;

/// `I, J` uniform on `1..=max_types`, `Π_ij ~ U[lo, hi]` and
/// `ν_k` log-uniform on `[1, 1e6]`.
pub fn random_market<R: Rng>(rng: &mut R, max_types: usize, lo: f64, hi: f64) -> ValidatedMarket {
    let ni = rng.gen_range(1..=max_types);
    let nj = rng.gen_range(1..=max_types);
    let gains = DMatrix::from_fn(ni, nj, |_, _| rng.gen_range(lo..=hi));
    let population = (0..ni + nj).map(|_| 10f64.powf(rng.gen_range(0.0..=6.0))).collect();
    validate_market(
        GainsMatrix::new(gains).unwrap(),
        PopulationVector::new(population).unwrap(),
    )
    .unwrap()
}

pub fn market(rows: &[Vec<f64>], nu: &[f64]) -> ValidatedMarket {
    validate_market(
        GainsMatrix::from_rows(rows).unwrap(),
        PopulationVector::new(nu.to_vec()).unwrap(),
    )
    .unwrap()
}

/// Market file text for `rows` (mode `Pi`) with generated labels.
pub fn market_text(rows: &[Vec<f64>], nu: &[f64]) -> String {
    let (ni, nj) = (rows.len(), rows[0].len());
    let men: Vec<String> = (1..=ni).map(|i| format!("m{i}")).collect();
    let women: Vec<String> = (1..=nj).map(|j| format!("f{j}")).collect();
    let mut text = format!(
        "[types.male]\n{}\n[types.female]\n{}\n[gains mode=Pi]\n",
        men.join(" "),
        women.join(" ")
    );
    for row in rows {
        text += &row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
        text.push('\n');
    }
    text += "[population]\n";
    for (label, v) in men.iter().chain(&women).zip(nu) {
        text += &format!("{label} {v:?}\n");
    }
    text
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}
