mod common;

use common::*;
use deepfactor::baseline::{linear_predict, ols_fit, LinearModel};
use deepfactor::factors::Sample;
use deepfactor::Error;
use proptest::prelude::*;
use rand::Rng;

fn random_design(seed: u64, n: usize, p: usize, noise: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = rng(seed);
    let beta = random_vec(&mut rng, p, -1.0, 1.0);
    let x: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, p, -1.0, 1.0)).collect();
    let y = x
        .iter()
        .map(|row| {
            let e: f64 = rng.random_range(-1.0..1.0);
            0.3 + row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + noise * e
        })
        .collect();
    (x, y)
}

fn samples(x: &[Vec<f64>], y: &[f64]) -> Vec<Sample> {
    x.iter()
        .zip(y)
        .map(|(r, &t)| Sample::from_xy(r.clone(), t))
        .collect()
}

#[test]
fn matches_qr_oracle_on_100_by_80() {
    let (x, y) = random_design(31, 100, 80, 0.5);
    let model = ols_fit(&samples(&x, &y), 0.0).unwrap();
    let (a, b) = qr_least_squares(&x, &y);
    assert!((model.intercept - a).abs() <= 1e-8 * a.abs().max(1.0));
    for (got, want) in model.coefficients.iter().zip(&b) {
        assert!(
            (got - want).abs() <= 1e-8 * want.abs().max(1.0),
            "{got} vs {want}"
        );
    }
}

#[test]
fn exact_linear_data() {
    let mut rng = rng(32);
    let x: Vec<Vec<f64>> = (0..50)
        .map(|_| random_vec(&mut rng, 3, -1.0, 1.0))
        .collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[1]).collect();
    let m = ols_fit(&samples(&x, &y), 0.0).unwrap();
    assert!(m.intercept.abs() < 1e-10);
    for (got, want) in m.coefficients.iter().zip([2.0, -1.0, 0.0]) {
        assert!((got - want).abs() < 1e-10);
    }
}

#[test]
fn constant_target_gives_intercept_only() {
    let mut rng = rng(33);
    let x: Vec<Vec<f64>> = (0..40)
        .map(|_| random_vec(&mut rng, 4, -1.0, 1.0))
        .collect();
    let y = vec![0.7; 40];
    let m = ols_fit(&samples(&x, &y), 0.0).unwrap();
    assert!((m.intercept - 0.7).abs() < 1e-12);
    assert!(m.coefficients.iter().all(|c| c.abs() < 1e-12));
}

#[test]
fn rank_deficiency_needs_ridge() {
    let mut rng = rng(34);
    let x: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            vec![v, 2.0 * v]
        })
        .collect();
    let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
    let s = samples(&x, &y);
    assert!(matches!(ols_fit(&s, 0.0), Err(Error::SingularDesign)));
    assert!(ols_fit(&s, 1e-6).is_ok());
}

#[test]
fn ridge_path_approaches_ols() {
    let (x, y) = random_design(35, 200, 6, 0.3);
    let s = samples(&x, &y);
    let ols = ols_fit(&s, 0.0).unwrap();
    let mut last = f64::INFINITY;
    for lambda in [1.0, 1e-2, 1e-4, 1e-6, 1e-8] {
        let ridge = ols_fit(&s, lambda).unwrap();
        let dist = ridge
            .coefficients
            .iter()
            .zip(&ols.coefficients)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dist <= last);
        last = dist;
    }
    assert!(last < 1e-8);
}

#[test]
fn fitted_prediction_matches_dot_product() {
    let (x, y) = random_design(36, 60, 5, 0.1);
    let m = ols_fit(&samples(&x, &y), 0.0).unwrap();
    let mut want = m.intercept;
    for (c, v) in m.coefficients.iter().zip(&x[0]) {
        want += c * v;
    }
    assert!((m.predict(&x[0]).unwrap() - want).abs() < 1e-14);
}

#[test]
fn zero_and_unit_models() {
    assert_eq!(
        LinearModel::<f64>::zeros(3)
            .predict(&[1.0, 2.0, 3.0])
            .unwrap(),
        0.0
    );
    let m = LinearModel {
        intercept: 1.0,
        coefficients: vec![1.0, 0.0, 0.0],
    };
    assert_eq!(linear_predict(&m, &[3.0, 0.0, 0.0]).unwrap(), 4.0);
    assert!(linear_predict(&m, &[1.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn residuals_orthogonal_to_regressors(seed in any::<u64>(), p in 1usize..8) {
        let (x, y) = random_design(seed, 50, p, 1.0);
        let m = ols_fit(&samples(&x, &y), 0.0).unwrap();
        let resid: Vec<f64> = x.iter().zip(&y).map(|(r, t)| t - m.predict(r).unwrap()).collect();
        prop_assert!(resid.iter().sum::<f64>().abs() < 1e-8);
        for c in 0..p {
            let dot: f64 = x.iter().zip(&resid).map(|(r, e)| r[c] * e).sum();
            prop_assert!(dot.abs() < 1e-8);
        }
    }

    #[test]
    fn prediction_is_affine(seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut rng = rng(seed);
        let m = LinearModel {
            intercept: rng.random_range(-1.0..1.0),
            coefficients: random_vec(&mut rng, 6, -1.0, 1.0),
        };
        let x = random_vec(&mut rng, 6, -1.0, 1.0);
        let z = random_vec(&mut rng, 6, -1.0, 1.0);
        let mix: Vec<f64> = x.iter().zip(&z).map(|(u, v)| a * u + (1.0 - a) * v).collect();
        let lhs = m.predict(&mix).unwrap();
        let rhs = a * m.predict(&x).unwrap() + (1.0 - a) * m.predict(&z).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn agrees_with_qr(seed in any::<u64>(), p in 1usize..10) {
        let (x, y) = random_design(seed, 40, p, 0.5);
        let m = ols_fit(&samples(&x, &y), 0.0).unwrap();
        let (a, b) = qr_least_squares(&x, &y);
        prop_assert!((m.intercept - a).abs() < 1e-8 * a.abs().max(1.0));
        for (g, w) in m.coefficients.iter().zip(&b) {
            prop_assert!((g - w).abs() < 1e-8 * w.abs().max(1.0));
        }
    }
}
