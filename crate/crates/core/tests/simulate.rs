mod common;

use common::rng;
use opffr::quadrature::Curve;
use opffr::simulate::*;
use opffr::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

/// Trigamma by recurrence to a large argument and the asymptotic series.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 40.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = x * x;
    acc + 1.0 / x + 1.0 / (2.0 * x2) + 1.0 / (6.0 * x2 * x) - 1.0 / (30.0 * x2 * x2 * x)
        + 1.0 / (42.0 * x2 * x2 * x2 * x)
}

#[test]
fn true_beta_values() {
    assert_eq!(true_beta(1, 0.0, 0.0).unwrap(), 1.0);
    assert!((true_beta(3, 0.0, 0.0).unwrap() - 58.0 / 9.0).abs() < 1e-12);
    assert!((true_beta(1, 0.3, 0.4).unwrap() - (-0.7f64).exp()).abs() < 1e-15);
    assert!(matches!(true_beta(4, 0.0, 0.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(true_beta(0, 0.0, 0.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(true_beta(1, 1.2, 0.0), Err(Error::Domain { .. })));
}

#[test]
fn scenario2_series_at_center() {
    let term = |k: usize| {
        let th = |s: f64| if k == 1 { 1.0 } else { 2f64.sqrt() * ((k - 1) as f64 * PI * s).cos() };
        let sg = if k % 2 == 1 { 4.0 } else { -4.0 };
        sg / (k * k) as f64 * th(0.5) * th(0.5)
    };
    let long: f64 = (1..=10_000).map(term).sum();
    let tail: f64 = (51..=10_000).map(term).sum();
    let v = true_beta(2, 0.5, 0.5).unwrap();
    assert!((v - (long - tail)).abs() < 1e-10, "{v} vs {}", long - tail);
    // closed form of the 50-term sum: only odd k survive at the center
    let closed = PI * PI - 4.0 - 2.0 * trigamma(25.5);
    assert!((v - closed).abs() < 1e-10, "{v} vs {closed}");
}

#[test]
fn score_distribution() {
    let z = draw_scores(3, 33_334, &mut rng(1)).unwrap();
    let vals: Vec<f64> = z.iter().flatten().copied().collect();
    assert!(vals.len() >= 100_000);
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    assert!((0.99..=1.01).contains(&var), "variance {var}");
    assert!(vals.iter().all(|v| v.abs() <= 3f64.sqrt()));
    assert_eq!(draw_scores(1, 2, &mut rng(1)).unwrap()[0].len(), 50);
}

#[test]
fn zero_scores_give_zero_curves() {
    for id in 1..=3 {
        let z = vec![vec![0.0; predictor_terms(id)]; 2];
        let s = predictors_from_scores(id, z, &uniform_grid(20)).unwrap();
        assert!(s.curves.iter().all(|c| c.ordinates().iter().all(|v| *v == 0.0)));
    }
}

#[test]
fn draws_are_reproducible() {
    let spec = ScenarioSpec::dense(2, 5, 5.0, 42);
    let a = draw_predictors(&spec, &mut stream_rng(42, 3, Stream::Predictors)).unwrap();
    let b = draw_predictors(&spec, &mut stream_rng(42, 3, Stream::Predictors)).unwrap();
    assert_eq!(a, b);
    let c = draw_predictors(&spec, &mut stream_rng(42, 3, Stream::Noise)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn noise_level_follows_snr() {
    let spec = ScenarioSpec::dense(3, 8, 10.0, 1);
    let x = draw_predictors(&spec, &mut rng(2)).unwrap();
    let y = make_responses(&spec, &x, &mut rng(3)).unwrap();
    assert!((y.sigma - pooled_sd(&y.signal) / 10.0).abs() < 1e-15);
    assert_ne!(y.observed, y.signal);
    let clean = ScenarioSpec { snr: f64::INFINITY, ..spec };
    let y = make_responses(&clean, &x, &mut rng(3)).unwrap();
    assert_eq!(y.sigma, 0.0);
    assert_eq!(y.observed, y.signal);
    assert!(add_noise(&y.signal, 0.0, &mut rng(1)).is_err());
}

#[test]
fn noiseless_response_matches_riemann_sum() {
    let z = draw_scores(3, 2, &mut rng(5)).unwrap();
    let grid = uniform_grid(20);
    let fns: Vec<_> = z.iter().map(|zi| move |s: f64| predictor_value(3, zi, s)).collect();
    let beta = |t: f64, s: f64| true_beta(3, t, s).unwrap();
    let y = noiseless_responses(beta, &fns, &grid).unwrap();
    let m = 50_000;
    for (c, f) in y.iter().zip(&fns) {
        for (&t, &v) in grid.iter().zip(c.ordinates()) {
            let riemann: f64 = (0..m)
                .map(|i| {
                    let s = (i as f64 + 0.5) / m as f64;
                    beta(t, s) * f(s)
                })
                .sum::<f64>()
                / m as f64;
            assert!((v - riemann).abs() < 1e-8, "t={t}: {v} vs {riemann}");
        }
    }
}

#[test]
fn sparsify_examples() {
    let x = predictors_from_scores(3, draw_scores(3, 4, &mut rng(6)).unwrap(), &uniform_grid(50))
        .unwrap()
        .curves;
    assert_eq!(sparsify(&x, 50, &mut rng(1)).unwrap(), x);
    let s = sparsify(&x, 5, &mut rng(7)).unwrap();
    for (c, orig) in s.iter().zip(&x) {
        assert_eq!(c.len(), 5);
        assert!(c.abscissae().windows(2).all(|w| w[0] < w[1]));
        for (a, v) in c.abscissae().iter().zip(c.ordinates()) {
            let j = orig.abscissae().iter().position(|b| b == a).unwrap();
            assert_eq!(orig.ordinates()[j], *v);
        }
    }
    assert_eq!(s, sparsify(&x, 5, &mut rng(7)).unwrap());
    assert!(matches!(sparsify(&x, 51, &mut rng(1)), Err(Error::InvalidArgument(_))));
}

#[test]
fn presmooth_examples() {
    let grid = uniform_grid(50);
    let target = uniform_grid(37);
    let sine = Curve::from_fn(&grid, |s| (2.0 * PI * s).sin()).unwrap();
    let out = presmooth(&[sine], &target).unwrap();
    let err = target
        .iter()
        .zip(out[0].ordinates())
        .fold(0.0f64, |a, (&t, &v)| a.max((v - (2.0 * PI * t).sin()).abs()));
    assert!(err < 1e-3, "sup error {err:e}");

    let two = Curve::new(vec![0.2, 0.6], vec![1.0, 3.0]).unwrap();
    let out = presmooth(&[two.clone()], &target).unwrap();
    for (&t, &v) in target.iter().zip(out[0].ordinates()) {
        assert_eq!(v, two.value_at(t));
    }

    let flat = Curve::from_fn(&[0.1, 0.3, 0.35, 0.7, 0.9], |_| 2.5).unwrap();
    let out = presmooth(&[flat], &target).unwrap();
    assert!(out[0].ordinates().iter().all(|v| (v - 2.5).abs() < 1e-10));
    assert!(presmooth(&[], &[0.5]).is_err());
}

fn deterministic_part(r: &SimReport) -> Vec<(usize, bool, f64, f64)> {
    r.rows.iter().map(|x| (x.replicate, x.presmoothed, x.mise, x.chosen_lambda)).collect()
}

#[test]
fn experiments_are_reproducible() {
    let spec = ScenarioSpec::dense(3, 10, 5.0, 11);
    let cfg = ExperimentConfig {
        replicates: 3,
        test_size: Some(5),
        ..Default::default()
    };
    let a = run_experiment(&spec, &cfg).unwrap();
    let b = run_experiment(&spec, &cfg).unwrap();
    assert_eq!(deterministic_part(&a), deterministic_part(&b));
    assert_eq!(a.rows.len(), 3);
    assert!(a.failures.is_empty());
    for row in &a.rows {
        assert!(row.mise >= 0.0);
        assert_eq!(row.log2_mise, row.mise.log2());
    }
    // one replicate alone equals the same replicate of a larger run
    let one = run_experiment(&spec, &ExperimentConfig { replicates: 1, ..cfg.clone() }).unwrap();
    assert_eq!(deterministic_part(&one)[0], deterministic_part(&a)[0]);

    assert!(run_experiment(&spec, &ExperimentConfig { test_size: Some(0), ..cfg.clone() }).is_err());
    assert!(run_experiment(&spec, &ExperimentConfig { replicates: 0, ..cfg.clone() }).is_err());
    assert!(run_experiment(&ScenarioSpec { id: 4, ..spec }, &cfg).is_err());
}

#[test]
fn sparse_paths_both_run() {
    let spec = ScenarioSpec::sparse(3, 12, 10.0, 3, 10);
    let cfg = ExperimentConfig {
        replicates: 1,
        test_size: Some(5),
        ..Default::default()
    };
    let r = run_experiment(&spec, &cfg).unwrap();
    assert_eq!(r.mises(true).len(), 1);
    assert_eq!(r.mises(false).len(), 1);
    let direct = run_experiment(&spec, &ExperimentConfig { sparse_path: SparsePath::Direct, ..cfg }).unwrap();
    assert_eq!(direct.mises(false), r.mises(false));
    assert!(direct.mises(true).is_empty());
    assert!(ScenarioSpec::sparse(3, 12, 10.0, 3, 60).validate().is_err());
}

#[test]
fn more_curves_help_noiseless_scenario3() {
    let cfg = ExperimentConfig {
        replicates: 20,
        test_size: Some(10),
        ..Default::default()
    };
    let small = run_experiment(&ScenarioSpec::dense(3, 15, f64::INFINITY, 21), &cfg).unwrap();
    let large = run_experiment(&ScenarioSpec::dense(3, 60, f64::INFINITY, 21), &cfg).unwrap();
    let (a, b) = (large.median(false).unwrap(), small.median(false).unwrap());
    assert!(a < b, "median MISE n=60 {a:e} vs n=15 {b:e}");
}

#[test]
fn quantiles() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile(&v, 0.5), 2.5);
    assert_eq!(quantile(&v, 0.25), 1.75);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictors_are_linear_in_scores(seed in 0u64..1000, a in -3.0f64..3.0, id in 1u8..4) {
        let z = draw_scores(id, 2, &mut rng(seed)).unwrap();
        let mix: Vec<f64> = z[0].iter().zip(&z[1]).map(|(p, q)| a * p + q).collect();
        for s in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let lhs = predictor_value(id, &mix, s);
            let rhs = a * predictor_value(id, &z[0], s) + predictor_value(id, &z[1], s);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn streams_are_independent(seed in 0u64..1000, r in 0u64..50) {
        use rand::Rng;
        let mut a = stream_rng(seed, r, Stream::Predictors);
        let mut b = stream_rng(seed, r, Stream::Test);
        let x: u64 = a.random();
        let y: u64 = b.random();
        prop_assert_ne!(x, y);
    }
}
