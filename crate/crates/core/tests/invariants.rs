mod common;

use choo_siow::duality::probe_conjugate;
use choo_siow::io::ObservedDistribution;
use choo_siow::model::{objective_h_value, DEFAULT_CLEARING_TOLERANCE};
use choo_siow::solver::hessian_at;
use choo_siow::statics::{spectral_diagnostic, CheckMode};
use choo_siow::{
    objective_e, objective_h, reduce_unpopulated, residual, solve, solve_from, statics_matrix, AmplitudeVector,
    Equilibrium, GainsMatrix, PopulationVector, SolverOptions, ValidatedMarket,
};
use choo_siow::{validate_market, Error};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn arb_market(max_types: usize, lo: f64, hi: f64) -> impl Strategy<Value = ValidatedMarket> {
    (1..=max_types, 1..=max_types).prop_flat_map(move |(ni, nj)| {
        (
            prop::collection::vec(lo..=hi, ni * nj),
            prop::collection::vec(0.0..=6.0f64, ni + nj),
        )
            .prop_map(move |(gains, log_nu)| {
                let gains = GainsMatrix::new(DMatrix::from_row_slice(ni, nj, &gains)).unwrap();
                let nu = log_nu.iter().map(|p| 10f64.powf(*p)).collect();
                validate_market(gains, PopulationVector::new(nu).unwrap()).unwrap()
            })
    })
}

fn arb_market_and_point() -> impl Strategy<Value = (ValidatedMarket, Vec<f64>)> {
    arb_market(6, 0.0, 5.0).prop_flat_map(|m| {
        let dim = m.dim();
        (Just(m), prop::collection::vec(-5.0..5.0f64, dim))
    })
}

fn solved(m: &ValidatedMarket) -> Equilibrium {
    solve(m, &SolverOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residual_is_gradient_minus_population((m, b) in arb_market_and_point()) {
        let eval = objective_h(&b, m.gains()).unwrap();
        let r = residual(&AmplitudeVector::from_log(b.clone()).unwrap(), &m);
        for (k, nu) in m.population().as_slice().iter().enumerate() {
            let expected = eval.gradient[k] - nu;
            prop_assert!((r[k] - expected).abs() <= 1e-12 * (eval.gradient[k].abs() + nu));
        }
    }

    #[test]
    fn e_equals_h_minus_pairing((m, b) in arb_market_and_point()) {
        let beta: Vec<f64> = b.iter().map(|x| x.exp()).collect();
        let h = objective_h_value(&b, m.gains()).unwrap();
        let pairing: f64 = b.iter().zip(m.population().as_slice()).map(|(x, n)| x * n).sum();
        let e = objective_e(&beta, &m);
        prop_assert!((e - (h - pairing)).abs() <= 1e-10 * (h.abs() + pairing.abs() + 1.0));
    }

    #[test]
    fn hessian_is_positive_definite((m, b) in arb_market_and_point()) {
        let eval = objective_h(&b, m.gains()).unwrap();
        prop_assert!(eval.hessian.clone().cholesky().is_some());
        prop_assert!((&eval.hessian - eval.hessian.transpose()).amax() == 0.0);
    }

    #[test]
    fn derivatives_match_differences((m, b) in arb_market_and_point()) {
        let eval = objective_h(&b, m.gains()).unwrap();
        let h = 1e-6;
        for k in 0..b.len() {
            let shifted = |d: f64| { let mut x = b.clone(); x[k] += d; x };
            let fd = (objective_h_value(&shifted(h), m.gains()).unwrap()
                - objective_h_value(&shifted(-h), m.gains()).unwrap()) / (2.0 * h);
            prop_assert!((fd - eval.gradient[k]).abs() <= 1e-6 * (eval.value.abs() + 1.0));
            let plus = objective_h(&shifted(h), m.gains()).unwrap().gradient;
            let minus = objective_h(&shifted(-h), m.gains()).unwrap().gradient;
            for l in 0..b.len() {
                let fd = (plus[l] - minus[l]) / (2.0 * h);
                prop_assert!((fd - eval.hessian[(l, k)]).abs() <= 1e-6 * (eval.hessian.amax() + 1.0));
            }
        }
    }

    #[test]
    fn solution_is_unique_and_clears(m in arb_market(8, 0.0, 5.0), shift in prop::collection::vec(-3.0..3.0f64, 16)) {
        let eq = solved(&m);
        let start: Vec<f64> = eq.amplitudes().log_beta().iter().zip(&shift).map(|(b, d)| b + d).collect();
        let other = solve_from(&m, &SolverOptions::default(), &start).unwrap();
        for (a, b) in eq.amplitudes().beta().iter().zip(other.amplitudes().beta()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
        let report = eq.distribution().clearing_report(&m);
        prop_assert!(report.holds(DEFAULT_CLEARING_TOLERANCE), "{:?}", report);
    }

    #[test]
    fn objective_trace_decreases(m in arb_market(8, 0.0, 5.0)) {
        let eq = solved(&m);
        for pair in eq.objective_trace().windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
    }

    #[test]
    fn conjugate_supremum_is_attained(m in arb_market(4, 0.0, 5.0)) {
        let eq = solved(&m);
        let radii: Vec<f64> = (0..6).map(|p| 10f64.powi(-p)).collect();
        let probe = probe_conjugate(&eq, &radii).unwrap();
        prop_assert!(probe.holds(), "{:?}", probe);
    }

    #[test]
    fn statics_inverse_and_sign_pattern(m in arb_market(6, 0.05, 5.0)) {
        let eq = solved(&m);
        let report = statics_matrix(&eq).unwrap();
        let hessian = hessian_at(&eq).unwrap().hessian;
        let product = &report.r_matrix * &hessian * 0.5;
        let identity = DMatrix::<f64>::identity(m.dim(), m.dim());
        prop_assert!((product - identity).amax() < 1e-6);
        prop_assert_eq!(report.sign_check.mode, CheckMode::Strict);
        prop_assert!(report.sign_check.passed(), "{:?}", report.sign_check.failures);
        prop_assert!(spectral_diagnostic(&eq).unwrap().lambda_max < 1.0);
    }

    #[test]
    fn observed_distribution_recovers_gains(m in arb_market(6, 0.05, 5.0)) {
        let eq = solved(&m);
        let d = eq.distribution();
        let observed = ObservedDistribution {
            male_types: m.gains().row_labels().to_vec(),
            female_types: m.gains().col_labels().to_vec(),
            married: d.married.row_iter().map(|r| r.iter().copied().collect()).collect(),
            single_men: d.single_men.clone(),
            single_women: d.single_women.clone(),
        };
        for (i, row) in observed.gains().iter().enumerate() {
            for (j, g) in row.iter().enumerate() {
                let p = m.gains().get(i, j);
                prop_assert!((g - p).abs() <= 1e-10 * p);
            }
        }
    }

    #[test]
    fn unpopulated_types_do_not_matter(m in arb_market(5, 0.0, 5.0), extra in 0.0..5.0f64) {
        // Append an unpopulated male type with arbitrary gains.
        let (ni, nj) = (m.male_types(), m.female_types());
        let gains = DMatrix::from_fn(ni + 1, nj, |i, j| if i < ni { m.gains().get(i, j) } else { extra });
        let mut raw = m.population().as_slice()[..ni].to_vec();
        raw.push(0.0);
        raw.extend_from_slice(&m.population().as_slice()[ni..]);
        let (reduced, reduction) = reduce_unpopulated(&GainsMatrix::new(gains).unwrap(), &raw).unwrap();
        prop_assert_eq!(reduction.dropped(), vec![ni]);
        let a = solved(&m);
        let b = solved(&reduced);
        prop_assert_eq!(a.amplitudes().beta(), b.amplitudes().beta());
        let embedded = reduction.embed_distribution(b.distribution());
        prop_assert!(embedded.married.row(ni).iter().all(|&v| v == 0.0));
        prop_assert_eq!(embedded.single_men[ni], 0.0);
    }
}

#[test]
fn population_scaling_overflows_cleanly() {
    let m = common::market(&[vec![1.0]], &[1e305, 1e305]);
    assert!(matches!(
        solve(&m, &SolverOptions::default()),
        Err(Error::Scaling { .. })
    ));
}

#[test]
fn one_sided_markets_are_rejected() {
    let gains = GainsMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
    assert!(matches!(
        reduce_unpopulated(&gains, &[0.0, 0.0, 0.0]),
        Err(Error::AllUnpopulated)
    ));
    assert!(matches!(
        reduce_unpopulated(&gains, &[0.0, 3.0, 4.0]),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        reduce_unpopulated(&gains, &[1.0, -3.0, 4.0]),
        Err(Error::InvalidPopulation { index: 1, .. })
    ));
}

#[test]
fn degenerate_markets_use_boundary_mode() {
    let m = common::market(&[vec![0.0, 1.0], vec![0.0, 2.0]], &[10.0, 20.0, 5.0, 40.0]);
    let report = statics_matrix(&solved(&m)).unwrap();
    assert_eq!(report.sign_check.mode, CheckMode::Boundary);
    assert!(report.sign_check.passed());
    assert!(!report.sign_check.boundary_cases.is_empty());
}

#[test]
fn public_types_are_thread_safe() {
    fn assert_send_sync<T: Send + Sync>() {}
    assert_send_sync::<ValidatedMarket>();
    assert_send_sync::<Equilibrium>();
    assert_send_sync::<choo_siow::StaticsReport>();
    assert_send_sync::<choo_siow::io::ReportFile>();
    assert_send_sync::<Error>();
}

#[test]
fn markets_solve_concurrently() {
    let markets: Vec<ValidatedMarket> = (1..=8)
        .map(|n| common::market(&[vec![n as f64, 1.0]], &[10.0 * n as f64, 7.0, 9.0]))
        .collect();
    let serial: Vec<Vec<f64>> = markets.iter().map(|m| solved(m).amplitudes().beta().to_vec()).collect();
    let parallel: Vec<Vec<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = markets
            .iter()
            .map(|m| s.spawn(move || solved(m).amplitudes().beta().to_vec()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(serial, parallel);
}
