//! Monte Carlo properties of the estimators and their variance models.

use std::ops::ControlFlow;

use mdife::factor::{extract_proxies, fit_a_hat};
use mdife::harness::dgp::{gen_dgp_growing, DgpConfig};
use mdife::harness::mc::{monte_carlo, McConfig, McRunOptions};
use mdife::harness::pipeline::{EstimatorSpec, Panel, PipelineSettings};
use mdife::inference::{
    estimate_gamma_x, var_hac, var_heteroskedastic, var_homoskedastic, VarianceModel,
};
use mdife::tensor::{cp_compose, mode_product};
use mdife::{Matrix, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn normal_tensor(shape: &[usize], rng: &mut ChaCha20Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal)).unwrap()
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Sums of neighbouring cells in every mode of an iid normal tensor, so that
/// cells one step apart in any mode are correlated.
fn moving_average_tensor(shape: &[usize], rng: &mut ChaCha20Rng) -> Tensor {
    let padded: Vec<usize> = shape.iter().map(|n| n + 1).collect();
    let mut t = normal_tensor(&padded, rng);
    for (mode, &n) in shape.iter().enumerate() {
        let b = Matrix::from_fn(
            n,
            n + 1,
            |i, j| if j == i || j == i + 1 { 1.0 } else { 0.0 },
        );
        t = mode_product(&t, &b, mode).unwrap();
    }
    t
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn growing_settings(variance: VarianceModel) -> PipelineSettings {
    PipelineSettings {
        gamma_ranks: Some(vec![4]),
        a_ranks: Some(vec![2]),
        variance,
        ..PipelineSettings::default()
    }
}

#[test]
fn proxies_align_with_true_loadings() {
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let shape = [20, 20, 20];
    let phis: Vec<Matrix> = shape
        .iter()
        .map(|&n| normal_matrix(n, 2, &mut rng))
        .collect();
    let a = cp_compose(&phis).unwrap();
    let noise = normal_tensor(&shape, &mut rng).scale(0.01);
    let proxies = extract_proxies(&a.add(&noise).unwrap(), &[0, 1, 2], &[2, 2, 2]).unwrap();
    for (mode, phi) in phis.iter().enumerate() {
        let p = proxies.get(mode).unwrap();
        // best linear alignment of the proxies on an intercept and the loadings
        let mut design = Matrix::from_element(phi.nrows(), 3, 1.0);
        design.columns_mut(1, 2).copy_from(phi);
        let coef = (design.transpose() * &design).try_inverse().unwrap() * design.transpose() * p;
        let err = p - &design * coef;
        let mse = err.norm_squared() / err.len() as f64;
        assert!(mse < 1e-2, "mode {mode}: mean squared proxy error {mse}");
    }
}

#[test]
fn fixed_effect_estimate_beats_raw_noise() {
    let config = DgpConfig::growing(20, 1.0);
    for seed in 0..50 {
        let draw = gen_dgp_growing(&config, 500 + seed).unwrap();
        let residual = draw.a_true.add(&draw.eps).unwrap();
        let a_hat = fit_a_hat(&residual, &[2, 2, 2]).unwrap();
        let err = a_hat.sub(&draw.a_true).unwrap().frobenius_norm();
        assert!(err < draw.eps.frobenius_norm(), "seed {seed}: {err}");
    }
}

#[test]
fn regressor_low_rank_part_beats_raw_noise() {
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let shape = [20, 20, 20];
    for draw in 0..50 {
        let gamma = cp_compose(
            &shape
                .iter()
                .map(|&n| normal_matrix(n, 2, &mut rng))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let noise = normal_tensor(&shape, &mut rng);
        let x = gamma.add(&noise).unwrap();
        let gamma_hat = estimate_gamma_x(&[x], &[2, 2, 2]).unwrap().remove(0);
        let err = gamma_hat.sub(&gamma).unwrap().frobenius_norm();
        assert!(err < noise.frobenius_norm(), "draw {draw}: {err}");
    }
}

#[test]
fn entrywise_weights_remove_fixed_design_bias() {
    let config = McConfig {
        dgp: DgpConfig::fixed(vec![20, 20, 20]),
        estimators: vec![EstimatorSpec::Ker { h: 0.2 }, EstimatorSpec::Ik { h: 0.2 }],
        settings: PipelineSettings::default(),
        rounds: 200,
        master_seed: 13,
    };
    let result = monte_carlo(&config, McRunOptions::default(), |_| {
        ControlFlow::Continue(())
    })
    .unwrap();
    let ker = &result.summary.rows[0];
    let ik = &result.summary.rows[1];
    assert_eq!(ik.failures, 0);
    assert!(ik.bias.abs() < 0.05, "entrywise bias {}", ik.bias);
    assert!(
        ik.rmse < ker.rmse,
        "entrywise rmse {} against plain {}",
        ik.rmse,
        ker.rmse
    );
}

#[test]
fn corrected_interval_covers_under_iid_errors() {
    let config = DgpConfig::growing(30, 1.0);
    let settings = growing_settings(VarianceModel::Homoskedastic);
    let spec = EstimatorSpec::Ic { h: 0.2 };
    let covered: Vec<bool> = (0..1000u64)
        .into_par_iter()
        .map(|round| {
            let draw = gen_dgp_growing(&config, 9000 + round).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(round);
            let eps = normal_tensor(draw.y.shape(), &mut rng);
            let y = draw.x[0].add(&draw.a_true).unwrap().add(&eps).unwrap();
            let mut panel = Panel::new(&y, &draw.x, &settings).unwrap();
            panel.estimate(&spec).unwrap().covers(&[1.0])[0]
        })
        .collect();
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64;
    assert!((0.92..=0.97).contains(&coverage), "coverage {coverage}");
}

#[test]
fn sandwich_agrees_with_homoskedastic_on_iid_data() {
    let mut rng = ChaCha20Rng::seed_from_u64(43);
    let shape = [10, 10, 10];
    let ratios: Vec<f64> = (0..500)
        .map(|_| {
            let eta = vec![
                normal_tensor(&shape, &mut rng),
                normal_tensor(&shape, &mut rng),
            ];
            let resid = normal_tensor(&shape, &mut rng);
            let homo = var_homoskedastic(&eta, &resid).unwrap();
            let het = var_heteroskedastic(&eta, &resid).unwrap();
            het[(0, 0)] / homo[(0, 0)]
        })
        .collect();
    let m = mean(&ratios);
    let sd =
        (ratios.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64).sqrt();
    let se = sd / (ratios.len() as f64).sqrt();
    assert!((m - 1.0).abs() < 3.0 * se + 5e-3, "mean ratio {m} ± {se}");
}

#[test]
fn sandwich_exceeds_homoskedastic_on_inflated_coordinate() {
    let mut rng = ChaCha20Rng::seed_from_u64(44);
    let shape = [30, 30, 30];
    let eta = vec![
        normal_tensor(&shape, &mut rng),
        normal_tensor(&shape, &mut rng),
    ];
    let z = normal_tensor(&shape, &mut rng);
    let resid = eta[0].zip_with(&z, |e, z| e * z).unwrap();
    let homo = var_homoskedastic(&eta, &resid).unwrap();
    let het = var_heteroskedastic(&eta, &resid).unwrap();
    // E[η⁴] / (E[η²] E[ε²]) = 3 on the inflated coordinate and 1 on the other
    let inflated = het[(0, 0)] / homo[(0, 0)];
    let other = het[(1, 1)] / homo[(1, 1)];
    assert!(inflated > 2.0, "inflated ratio {inflated}");
    assert!((other - 1.0).abs() < 0.15, "other ratio {other}");
}

#[test]
fn hac_widens_intervals_under_moving_average_errors() {
    let mut config = DgpConfig::growing(10, 1.0);
    config.permute_cross_sections = false;
    let mut rng = ChaCha20Rng::seed_from_u64(45);
    let mut wider = 0;
    let mut se0 = Vec::new();
    let mut se1 = Vec::new();
    for round in 0..500 {
        let eps = gen_dgp_growing(&config, 700 + round).unwrap().eps;
        let eta = vec![moving_average_tensor(eps.shape(), &mut rng)];
        let v0 = var_hac(&eta, &eps, &[0, 0, 0]).unwrap()[(0, 0)].sqrt();
        let v1 = var_hac(&eta, &eps, &[1, 1, 1]).unwrap()[(0, 0)].sqrt();
        wider += usize::from(v1 > v0);
        se0.push(v0);
        se1.push(v1);
    }
    assert!(
        mean(&se1) > mean(&se0),
        "mean SE {} against {}",
        mean(&se1),
        mean(&se0)
    );
    assert!(wider > 400, "{wider} of 500 draws wider");
}

#[test]
fn cross_fitting_moves_the_estimate_by_sampling_noise() {
    let config = DgpConfig::growing(20, 1.0);
    let plain = growing_settings(VarianceModel::Hac { lags: vec![1] });
    let spec = EstimatorSpec::Ic { h: 0.2 };
    let close: Vec<bool> = (0..200u64)
        .into_par_iter()
        .map(|round| {
            let draw = gen_dgp_growing(&config, 3000 + round).unwrap();
            let split = PipelineSettings {
                split: true,
                split_seed: round,
                ..plain.clone()
            };
            let full = Panel::new(&draw.y, &draw.x, &plain)
                .unwrap()
                .estimate(&spec)
                .unwrap();
            let cf = Panel::new(&draw.y, &draw.x, &split)
                .unwrap()
                .estimate(&spec)
                .unwrap();
            (full.beta[0] - cf.beta[0]).abs() < 3.0 * full.se[0]
        })
        .collect();
    let share = close.iter().filter(|&&c| c).count() as f64 / close.len() as f64;
    assert!(share >= 0.95, "share within 3 SE {share}");
}
