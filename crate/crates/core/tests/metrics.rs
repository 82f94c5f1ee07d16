use gisc_core::{fit_psnr_curve, mse, psnr, GiscError, Scene};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn scene_from(values: &[f64], n: usize, q: usize) -> Scene {
    Scene::new(
        DMatrix::from_fn(n, q, |r, c| values[(c * n + r) % values.len()]),
        8,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mse_is_symmetric_and_nonnegative(
        n in 2usize..8, q in 1usize..8,
        a in prop::collection::vec(0.0f64..=1.0, 1..64),
        b in prop::collection::vec(0.0f64..=1.0, 1..64),
    ) {
        let (x, y) = (scene_from(&a, n, q), scene_from(&b, n, q));
        let forward = mse(&x, &y).unwrap();
        prop_assert!(forward >= 0.0);
        prop_assert_eq!(forward, mse(&y, &x).unwrap());
        prop_assert_eq!(mse(&x, &x).unwrap(), 0.0);
        prop_assert!(psnr(&x, &x).unwrap().is_infinite());
    }

    #[test]
    fn uniform_shift_is_detected(
        n in 2usize..8, q in 1usize..8,
        base in prop::collection::vec(0.0f64..=0.5, 1..64),
        delta in 0.001f64..0.5,
    ) {
        let x = scene_from(&base, n, q);
        let shifted: Vec<f64> = x.data().iter().map(|v| v + delta).collect();
        let y = Scene::new(DMatrix::from_column_slice(n, q, &shifted), 8).unwrap();
        let expect = (delta * 255.0).powi(2);
        let got = mse(&x, &y).unwrap();
        prop_assert!((got - expect).abs() <= 1e-9 * expect);
        let db = psnr(&x, &y).unwrap().psnr_db.unwrap();
        prop_assert!((db - 10.0 * (65025.0 / expect).log10()).abs() < 1e-9);
    }

    #[test]
    fn larger_error_means_lower_psnr(
        base in prop::collection::vec(0.0f64..=0.5, 16),
        d1 in 0.001f64..0.25, d2 in 0.001f64..0.25,
    ) {
        let x = scene_from(&base, 4, 4);
        let shift = |d: f64| {
            let v: Vec<f64> = x.data().iter().map(|v| v + d).collect();
            Scene::new(DMatrix::from_column_slice(4, 4, &v), 8).unwrap()
        };
        let (r1, r2) = (psnr(&x, &shift(d1)).unwrap(), psnr(&x, &shift(d2)).unwrap());
        if r1.mse < r2.mse {
            prop_assert!(r1.psnr_db.unwrap() > r2.psnr_db.unwrap());
        }
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let a = Scene::new(DMatrix::zeros(4, 4), 8).unwrap();
    let b = Scene::new(DMatrix::zeros(4, 3), 8).unwrap();
    let c = Scene::new(DMatrix::zeros(4, 4), 16).unwrap();
    assert!(matches!(mse(&a, &b), Err(GiscError::Dimension(_))));
    assert!(matches!(psnr(&a, &c), Err(GiscError::Dimension(_))));
}

#[test]
fn sixteen_bit_peak() {
    let zeros = Scene::new(DMatrix::zeros(2, 2), 16).unwrap();
    let ones = Scene::new(DMatrix::from_element(2, 2, 1.0), 16).unwrap();
    let report = psnr(&zeros, &ones).unwrap();
    assert_eq!(report.mse, 65535.0f64.powi(2));
    assert_eq!(report.psnr_db, Some(0.0));
}

#[test]
fn noisy_quadratic_fit_recovers_coefficients() {
    let truth = [8.0, 30.0, -6.0];
    let sigma = 0.3;
    let etas: Vec<f64> = (0..40).map(|k| 0.2 + 0.02 * k as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, sigma).unwrap();
    let points: Vec<(f64, f64)> = etas
        .iter()
        .map(|&e| {
            (
                e,
                truth[0] + truth[1] * e + truth[2] * e * e + noise.sample(&mut rng),
            )
        })
        .collect();
    let fit = fit_psnr_curve(&points, 2).unwrap();

    // coefficient standard errors from the design's normal matrix
    let design = DMatrix::from_fn(etas.len(), 3, |r, c| etas[r].powi(c as i32));
    let cov = (design.transpose() * &design).try_inverse().unwrap() * sigma * sigma;
    for k in 0..3 {
        let se = cov[(k, k)].sqrt();
        assert!(
            (fit.coefficients[k] - truth[k]).abs() <= 3.0 * se,
            "coefficient {k}: {} vs {} (se {se})",
            fit.coefficients[k],
            truth[k]
        );
    }
    let residual_sum: f64 = fit.residuals.iter().sum();
    assert!(
        residual_sum.abs() < 1e-8,
        "intercept model leaves zero-mean residuals"
    );
}

#[test]
fn non_finite_points_are_rejected() {
    let pts = [(0.25, 10.0), (0.5, f64::INFINITY), (1.0, 30.0)];
    assert!(matches!(fit_psnr_curve(&pts, 2), Err(GiscError::Fit(_))));
}
