mod common;

use fads::chisq::{chi_square_sf, chi_square_sf_nc, chi_square_upper_quantile};
use fads::dantzig::estimate_projection;
use fads::penalized::{
    cross_validate_lambda1, fit_lasso_cox, kkt_residual, lambda1_rate_constant,
};
use fads::dantzig::lambda2_rate_constant;
use fads::survival::{FeatureAssembly, PartialLikelihood};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Direct O(n^2) negative log partial likelihood with risk-set averages
/// `(1/n) sum_{j at risk} exp(eta_j)`.
fn brute_force_value(times: &[f64], events: &[bool], x: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let eta = x * b;
    let n = times.len();
    let mut total = 0.0;
    for i in (0..n).filter(|&i| events[i]) {
        let risk: f64 = (0..n).filter(|&j| times[j] >= times[i]).map(|j| eta[j].exp()).sum();
        total += eta[i] - (risk / n as f64).ln();
    }
    -total / n as f64
}

#[test]
fn likelihood_matches_direct_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..25 {
        let data = common::random_dataset(30, 4, &mut rng);
        let pl = PartialLikelihood::new(&data, &common::covariate_features(&data)).unwrap();
        let b = common::random_coefs(4, 1.0, &mut rng);
        let direct = brute_force_value(data.times(), data.events(), data.covariates(), &b);
        assert!((pl.value(&b).unwrap() - direct).abs() < 1e-12);
    }
}

#[test]
fn three_subject_hand_value() {
    let x = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, -1.0]);
    let data = fads::SurvivalDataset::ungrouped(vec![1.0, 2.0, 3.0], vec![true, true, false], x.clone()).unwrap();
    let pl = PartialLikelihood::new(&data, &FeatureAssembly::covariates(x).unwrap()).unwrap();
    let v = pl.value(&DVector::from_element(1, 0.5)).unwrap();
    assert!((v + 0.347626).abs() < 1e-6, "{v}");
}

#[test]
fn lasso_solutions_satisfy_optimality_conditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let data = common::random_dataset(60, 25, &mut rng);
        let features = common::covariate_features(&data);
        let w = DVector::from_element(25, 1.0);
        let fit = fit_lasso_cox(&data, &features, &w, 0.05, 1e-9, 200).unwrap();
        assert!(fit.converged);
        let g = PartialLikelihood::new(&data, &features).unwrap().gradient(&fit.coefs).unwrap();
        assert!(kkt_residual(&g, &fit.coefs, &w, 0.05) <= 1e-9);
        assert!(fit.objective_trace.windows(2).all(|t| t[1] <= t[0] + 1e-15));
    }
}

#[test]
fn cross_validation_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = common::random_dataset(80, 10, &mut rng);
    let features = common::covariate_features(&data);
    let w = DVector::from_element(10, 1.0);
    let a = cross_validate_lambda1(&data, &features, &w, 5, 12, 3).unwrap();
    let b = cross_validate_lambda1(&data, &features, &w, 5, 12, 3).unwrap();
    assert_eq!(a.selected_lambda, b.selected_lambda);
    assert_eq!(a.cv_deviance, b.cv_deviance);
    assert!(a.lambda_path.windows(2).all(|p| p[1] < p[0]));
}

#[test]
fn projection_with_zero_lambda_solves_the_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = common::normal_matrix(12, 5, &mut rng);
    let a = m.tr_mul(&m) / 12.0 + DMatrix::identity(5, 5) * 0.2;
    let b = common::normal_matrix(5, 2, &mut rng);
    let proj = estimate_projection(&a, &b, 0.0, 1e-10).unwrap();
    let exact = a.clone().lu().solve(&b).unwrap();
    assert!((proj.w - exact).amax() < 1e-8);
}

#[test]
fn rate_constants_at_reference_sizes() {
    assert!((lambda1_rate_constant(150, 150, 150) - 1.17).abs() < 0.01);
    assert!((lambda1_rate_constant(200, 300, 300) - 1.08).abs() < 0.01);
    assert!((0.5 * lambda2_rate_constant(150, 150, 150) - 0.145).abs() < 0.005);
}

#[test]
fn chi_square_quantile_inverts_tail() {
    for k in 1..=6 {
        for alpha in [0.01, 0.05, 0.1, 0.5] {
            let q = chi_square_upper_quantile(alpha, k);
            assert!((chi_square_sf(q, k) - alpha).abs() < 1e-10);
        }
    }
    assert!((chi_square_upper_quantile(0.05, 2) - 5.991464547107979).abs() < 1e-9);
}

#[test]
fn noncentral_tail_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let draws = 10_000_000;
    for (k, h, x) in [(2u32, 5.0f64, 5.991f64), (2, 10.0, 12.0), (3, 1.0, 2.0)] {
        let shift = h.sqrt();
        let mut hits = 0u64;
        for _ in 0..draws {
            let mut s: f64 = StandardNormal.sample(&mut rng);
            s += shift;
            let mut v = s * s;
            for _ in 1..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += z * z;
            }
            hits += (v > x) as u64;
        }
        let empirical = hits as f64 / draws as f64;
        let p = chi_square_sf_nc(x, k, h);
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((empirical - p).abs() < 4.0 * se, "k={k} h={h}: {empirical} vs {p}");
    }
}
