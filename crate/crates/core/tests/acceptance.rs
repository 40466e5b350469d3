//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The Monte Carlo criteria take a few minutes on one core. The process exits
//! with status 0 after reporting; set `MDIFE_ACCEPTANCE_STRICT=1` to turn any
//! FAIL into a nonzero exit status.

use std::ops::ControlFlow;
use std::time::Instant;

use mdife::factor::{interactive_fe_fit, FactorOptions, ProxySet};
use mdife::harness::dgp::DgpConfig;
use mdife::harness::mc::{
    monte_carlo, summarize, EstimatorSummary, McConfig, McResult, McRunOptions,
};
use mdife::harness::pipeline::{EstimatorSpec, PipelineSettings};
use mdife::inference::{ic_estimate, var_hac, Orthogonalization, VarianceModel};
use mdife::kwfe::{
    build_weights, complement_projector, ker_estimate, kernel_weights, plain_projection,
    standard_within, weighted_within, KernelFamily, KernelSpec,
};
use mdife::tensor::{
    flatten, hosvd, mode_product, multilinear_rank, truncated_svd, unflatten, Matrix, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random instances per algebraic and property check.
const INSTANCES: usize = 100;
const ALGEBRA_TOL: f64 = 1e-10;
const FACTOR_RECOVERY_TOL: f64 = 1e-6;
const KER_RECOVERY_TOL: f64 = 1e-8;
const IC_RECOVERY_TOL: f64 = 1e-10;

const FIXED_ROUNDS: usize = 500;
const FIXED_DIM: usize = 40;
const FIXED_UNBIASED: f64 = 0.02;
const FIXED_BIASED: f64 = 0.10;
/// Rounds in which the kernel stage annihilates the regressor are recorded
/// as failures; at most this share may fail.
const MAX_FAILURE_SHARE: f64 = 0.01;

const GROWING_ROUNDS: usize = 1000;
const GROWING_BANDWIDTH: f64 = 0.2;
const IC_TARGET_30: f64 = 0.85;
const IC_TARGET_40: f64 = 0.92;
const IC_TOL: f64 = 0.05;
const KER_TARGET_30: f64 = 0.48;
const KER_TOL: f64 = 0.07;
const FACTOR_COVERAGE_MAX: f64 = 0.15;

const BANDS_ROUNDS: usize = 500;
const BANDS_DIMS: [usize; 3] = [30, 40, 50];

const FULL_SCALE_ROUNDS: usize = 10_000;
const FULL_SCALE_DIM: usize = 80;

struct Outcome {
    passed: bool,
    detail: String,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| normal(rng)).unwrap()
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| normal(rng))
}

fn random_shape(
    rng: &mut ChaCha8Rng,
    order_lo: usize,
    order_hi: usize,
    lo: usize,
    hi: usize,
) -> Vec<usize> {
    let d = rng.random_range(order_lo..=order_hi);
    (0..d).map(|_| rng.random_range(lo..=hi)).collect()
}

fn orthonormal(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Matrix {
    random_matrix(n, r, rng).qr().q().columns(0, r).into_owned()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn scale_of(t: &Tensor) -> f64 {
    t.data().iter().fold(1.0, |m, v| m.max(v.abs()))
}

/// Mode product evaluated entry by entry from its definition.
fn naive_mode_product(t: &Tensor, b: &Matrix, mode: usize) -> Tensor {
    let mut shape = t.shape().to_vec();
    shape[mode] = b.nrows();
    Tensor::from_fn(&shape, |idx| {
        let mut src = idx.to_vec();
        (0..t.shape()[mode])
            .map(|k| {
                src[mode] = k;
                b[(idx[mode], k)] * t.get(&src)
            })
            .sum()
    })
    .unwrap()
}

fn tally(name: &str, ok: usize, worst: f64) -> String {
    format!("{name} {ok}/{INSTANCES} (worst {worst:.1e})")
}

fn algebraic_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut parts = Vec::new();
    let mut all = true;

    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..INSTANCES {
        let shape = random_shape(&mut rng, 2, 4, 1, 6);
        let t = random_tensor(&shape, &mut rng);
        let mode = rng.random_range(0..shape.len());
        let back = unflatten(&flatten(&t, mode).unwrap(), mode, &shape).unwrap();
        let err = max_abs_diff(&back, &t);
        worst = worst.max(err);
        ok += usize::from(err == 0.0);
    }
    all &= ok == INSTANCES;
    parts.push(tally("roundtrip", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..INSTANCES {
        let shape = random_shape(&mut rng, 2, 4, 1, 5);
        let t = random_tensor(&shape, &mut rng);
        let mode = rng.random_range(0..shape.len());
        let b = random_matrix(rng.random_range(1..=5), shape[mode], &mut rng);
        let prod = mode_product(&t, &b, mode).unwrap();
        let via_flat = unflatten(&(&b * flatten(&t, mode).unwrap()), mode, prod.shape()).unwrap();
        let naive = naive_mode_product(&t, &b, mode);
        let err =
            (max_abs_diff(&prod, &via_flat).max(max_abs_diff(&prod, &naive))) / scale_of(&naive);
        worst = worst.max(err);
        ok += usize::from(err < ALGEBRA_TOL);
    }
    all &= ok == INSTANCES;
    parts.push(tally("mode-product", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..INSTANCES {
        let shape = random_shape(&mut rng, 2, 4, 1, 5);
        let t = random_tensor(&shape, &mut rng);
        let m = rng.random_range(0..shape.len());
        let n = (m + rng.random_range(1..shape.len())) % shape.len();
        let a = random_matrix(rng.random_range(1..=4), shape[m], &mut rng);
        let b = random_matrix(rng.random_range(1..=4), shape[n], &mut rng);
        let ab = mode_product(&mode_product(&t, &a, m).unwrap(), &b, n).unwrap();
        let ba = mode_product(&mode_product(&t, &b, n).unwrap(), &a, m).unwrap();
        let err = max_abs_diff(&ab, &ba) / scale_of(&ab);
        worst = worst.max(err);
        ok += usize::from(err < ALGEBRA_TOL);
    }
    all &= ok == INSTANCES;
    parts.push(tally("commutativity", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..INSTANCES {
        let (r, c) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let m = random_matrix(r, c, &mut rng);
        let k = rng.random_range(1..=r.min(c));
        let approx = truncated_svd(&m, k).unwrap().reconstruct();
        let resid = (&m - approx).norm_squared();
        let sigma = m.clone().svd(false, false).singular_values;
        let mut tail: Vec<f64> = sigma.iter().copied().collect();
        tail.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expected: f64 = tail[k..].iter().map(|s| s * s).sum();
        let err = (resid - expected).abs() / m.norm_squared();
        worst = worst.max(err);
        ok += usize::from(err < ALGEBRA_TOL);
    }
    all &= ok == INSTANCES;
    parts.push(tally("eckart-young", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..INSTANCES {
        let shape = random_shape(&mut rng, 3, 4, 2, 6);
        // a generic core has full multilinear rank when no rank exceeds the
        // product of the others
        let ranks = loop {
            let r: Vec<usize> = shape.iter().map(|&n| rng.random_range(1..=n)).collect();
            let total: usize = r.iter().product();
            if r.iter().all(|&x| x * x <= total) {
                break r;
            }
        };
        let mut t = random_tensor(&ranks, &mut rng);
        for (n, (&size, &r)) in shape.iter().zip(&ranks).enumerate() {
            t = mode_product(&t, &orthonormal(size, r, &mut rng), n).unwrap();
        }
        let rec = hosvd(&t, &ranks).unwrap().reconstruct();
        let err = max_abs_diff(&rec, &t) / scale_of(&t);
        let found = multilinear_rank(&t, 1e-8).unwrap().ranks;
        worst = worst.max(err);
        ok += usize::from(err < 1e-8 && found == ranks);
    }
    all &= ok == INSTANCES;
    parts.push(tally("hosvd", ok, worst));

    Outcome {
        passed: all,
        detail: parts.join(", "),
    }
}

fn exact_recovery_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let beta = [1.5, -0.75];
    let mut parts = Vec::new();
    let mut all = true;

    // noiseless interactive panel, low rank in the mode-0 flattening
    let mut factor_worst = 0.0f64;
    for _ in 0..10 {
        let shape = [9, 6, 5];
        let r = 2;
        let lambda = random_matrix(shape[0], r, &mut rng);
        let gamma = random_matrix(shape[1] * shape[2], r, &mut rng);
        let a = unflatten(&(&lambda * gamma.transpose()), 0, &shape).unwrap();
        let xs: Vec<Tensor> = (0..2)
            .map(|_| random_tensor(&shape, &mut rng).add_scaled(&a, 0.5).unwrap())
            .collect();
        let y = xs[0]
            .scale(beta[0])
            .add_scaled(&xs[1], beta[1])
            .unwrap()
            .add(&a)
            .unwrap();
        for r_hat in [r, r + 1] {
            let opts = FactorOptions {
                tol: 1e-14,
                max_iter: 5000,
            };
            let fit = interactive_fe_fit(&y, &xs, 0, r_hat, opts).unwrap();
            let err = fit
                .beta
                .iter()
                .zip(&beta)
                .map(|(b, t)| (b - t).abs())
                .fold(0.0, f64::max);
            factor_worst = factor_worst.max(err);
        }
    }
    all &= factor_worst < FACTOR_RECOVERY_TOL;
    parts.push(format!("factor r and r+1 worst {factor_worst:.1e}"));

    // fixed effects that depend only on the group of each index
    let mut ker_worst = 0.0f64;
    for _ in 0..10 {
        let shape = [9, 8, 7];
        let groups: Vec<Vec<usize>> = shape
            .iter()
            .map(|&n| (0..n).map(|i| i % 3).collect())
            .collect();
        let effect = random_tensor(&[3, 3, 3], &mut rng);
        let a = Tensor::from_fn(&shape, |i| {
            effect.get(&[groups[0][i[0]], groups[1][i[1]], groups[2][i[2]]])
        })
        .unwrap();
        let xs: Vec<Tensor> = (0..2)
            .map(|_| random_tensor(&shape, &mut rng).add(&a).unwrap())
            .collect();
        let y = xs[0]
            .scale(beta[0])
            .add_scaled(&xs[1], beta[1])
            .unwrap()
            .add(&a)
            .unwrap();
        let proxies = ProxySet::from_user(
            3,
            groups
                .iter()
                .enumerate()
                .map(|(n, g)| (n, Matrix::from_fn(g.len(), 1, |i, _| g[i] as f64)))
                .collect(),
        )
        .unwrap();
        let spec = KernelSpec::shared(KernelFamily::Indicator, 0.5).unwrap();
        let w = build_weights(&proxies, &spec, &[0, 1, 2]).unwrap();
        let fit = ker_estimate(&y, &xs, &plain_projection(&w)).unwrap();
        let err = fit
            .beta
            .iter()
            .zip(&beta)
            .map(|(b, t)| (b - t).abs())
            .fold(0.0, f64::max);
        ker_worst = ker_worst.max(err);
    }
    all &= ker_worst < KER_RECOVERY_TOL;
    parts.push(format!("indicator KER worst {ker_worst:.1e}"));

    // noiseless data with the true representation supplied
    let mut ic_worst = 0.0f64;
    for _ in 0..10 {
        let shape = [8, 7, 6];
        let a = random_tensor(&shape, &mut rng);
        let gamma_x: Vec<Tensor> = (0..2)
            .map(|_| random_tensor(&shape, &mut rng).add(&a).unwrap())
            .collect();
        let xs: Vec<Tensor> = gamma_x
            .iter()
            .map(|g| g.add(&random_tensor(&shape, &mut rng)).unwrap())
            .collect();
        let y = xs[0]
            .scale(beta[0])
            .add_scaled(&xs[1], beta[1])
            .unwrap()
            .add(&a)
            .unwrap();
        let orth = Orthogonalization::from_parts(&xs, gamma_x, a, beta.to_vec()).unwrap();
        let fit = ic_estimate(&y, &xs, &orth).unwrap();
        let err = fit
            .beta
            .iter()
            .zip(&beta)
            .map(|(b, t)| (b - t).abs())
            .fold(0.0, f64::max);
        ic_worst = ic_worst.max(err);
    }
    all &= ic_worst < IC_RECOVERY_TOL;
    parts.push(format!("true-orthogonalization IC worst {ic_worst:.1e}"));

    Outcome {
        passed: all,
        detail: parts.join(", "),
    }
}

fn run(config: &McConfig) -> McResult {
    monte_carlo(config, McRunOptions::default(), |_| {
        ControlFlow::Continue(())
    })
    .expect("valid configuration")
}

fn row<'a>(result: &'a McResult, spec: &EstimatorSpec) -> &'a EstimatorSummary {
    result.summary.row(spec).expect("estimator present")
}

fn non_psd(result: &McResult) -> usize {
    result.summary.rows.iter().map(|r| r.non_psd).sum()
}

fn factors(order: usize) -> Vec<EstimatorSpec> {
    (0..order)
        .map(|mode| EstimatorSpec::Factor { mode })
        .collect()
}

fn fixed_bias(non_psd_total: &mut usize) -> Outcome {
    let n = FIXED_DIM;
    let ic = [EstimatorSpec::Ic { h: 0.05 }, EstimatorSpec::Ic { h: 0.1 }];
    let mut estimators = vec![EstimatorSpec::Ols, EstimatorSpec::Within];
    estimators.extend(factors(3));
    estimators.extend(ic.iter().cloned());
    let config = McConfig {
        dgp: DgpConfig::fixed(vec![n; 3]),
        estimators,
        settings: PipelineSettings {
            gamma_ranks: Some(vec![2, n, n]),
            a_ranks: Some(vec![1, n, n]),
            ..PipelineSettings::default()
        },
        rounds: FIXED_ROUNDS,
        master_seed: 2024,
    };
    let result = run(&config);
    *non_psd_total += non_psd(&result);
    let unbiased = [
        EstimatorSpec::Factor { mode: 0 },
        ic[0].clone(),
        ic[1].clone(),
    ];
    let biased = [
        EstimatorSpec::Ols,
        EstimatorSpec::Within,
        EstimatorSpec::Factor { mode: 1 },
        EstimatorSpec::Factor { mode: 2 },
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for s in &unbiased {
        let (b, failures) = (row(&result, s).bias, row(&result, s).failures);
        passed &=
            b.abs() < FIXED_UNBIASED && failures as f64 <= MAX_FAILURE_SHARE * FIXED_ROUNDS as f64;
        let note = if failures > 0 {
            format!(" ({failures} failed rounds)")
        } else {
            String::new()
        };
        parts.push(format!("{} {b:+.4}{note}", s.label()));
    }
    for s in &biased {
        let b = row(&result, s).bias;
        passed &= b > FIXED_BIASED;
        parts.push(format!("{} {b:+.4}", s.label()));
    }
    Outcome {
        passed,
        detail: format!("{FIXED_ROUNDS} rounds at {n}^3: {}", parts.join(", ")),
    }
}

fn growing_config(dim: usize, rounds: usize) -> McConfig {
    let mut estimators = factors(3);
    estimators.push(EstimatorSpec::Ker {
        h: GROWING_BANDWIDTH,
    });
    estimators.push(EstimatorSpec::Ic {
        h: GROWING_BANDWIDTH,
    });
    McConfig {
        dgp: DgpConfig::growing(dim, 1.0),
        estimators,
        settings: PipelineSettings {
            gamma_ranks: Some(vec![4]),
            a_ranks: Some(vec![2]),
            variance: VarianceModel::Hac {
                lags: vec![1, 1, 1],
            },
            ..PipelineSettings::default()
        },
        rounds,
        master_seed: 7,
    }
}

struct GrowingRuns {
    runs: Vec<(usize, McConfig, McResult)>,
}

fn growing_coverage(runs: &GrowingRuns) -> Outcome {
    let ker = EstimatorSpec::Ker {
        h: GROWING_BANDWIDTH,
    };
    let ic = EstimatorSpec::Ic {
        h: GROWING_BANDWIDTH,
    };
    let mut passed = true;
    let mut parts = Vec::new();
    for (dim, _, result) in &runs.runs {
        let ic_cov = row(result, &ic).coverage;
        let ker_cov = row(result, &ker).coverage;
        let factor_cov: Vec<f64> = factors(3).iter().map(|s| row(result, s).coverage).collect();
        let ic_target = if *dim == 30 {
            IC_TARGET_30
        } else {
            IC_TARGET_40
        };
        let ic_ok = (ic_cov - ic_target).abs() <= IC_TOL;
        let factor_ok = factor_cov.iter().all(|&c| c <= FACTOR_COVERAGE_MAX);
        let mut line = format!(
            "Dim {dim}: Ker Inf {ic_cov:.3} (target {ic_target}±{IC_TOL}{}), Ker {ker_cov:.3}",
            if ic_ok { "" } else { ", MISS" }
        );
        passed &= ic_ok && factor_ok;
        if *dim == 30 {
            let ker_ok = (ker_cov - KER_TARGET_30).abs() <= KER_TOL;
            passed &= ker_ok;
            line.push_str(&format!(
                " (target {KER_TARGET_30}±{KER_TOL}{})",
                if ker_ok { "" } else { ", MISS" }
            ));
        }
        line.push_str(&format!(
            ", Factor {:.3}/{:.3}/{:.3} (max {FACTOR_COVERAGE_MAX}{})",
            factor_cov[0],
            factor_cov[1],
            factor_cov[2],
            if factor_ok { "" } else { ", MISS" }
        ));
        parts.push(line);
    }
    Outcome {
        passed,
        detail: format!("{GROWING_ROUNDS} rounds: {}", parts.join("; ")),
    }
}

fn band(config: &McConfig, result: &McResult, spec: &EstimatorSpec, rounds: usize) -> (f64, f64) {
    let j = config
        .estimators
        .iter()
        .position(|s| s == spec)
        .expect("estimator present");
    let outcomes: Vec<_> = result.records[..rounds]
        .iter()
        .map(|r| r.outcomes[j].clone())
        .collect();
    let s = summarize(spec, &outcomes, 1.0);
    (s.q025, s.q975)
}

fn bias_bands(growing_runs: &GrowingRuns, non_psd_total: &mut usize) -> Outcome {
    let ic = EstimatorSpec::Ic {
        h: GROWING_BANDWIDTH,
    };
    let mut extra = Vec::new();
    let mut passed = true;
    let mut parts = Vec::new();
    for dim in BANDS_DIMS {
        let (config, result) = match growing_runs.runs.iter().find(|(d, _, _)| *d == dim) {
            Some((_, c, r)) => (c, r),
            None => {
                let c = growing_config(dim, BANDS_ROUNDS);
                let r = run(&c);
                *non_psd_total += non_psd(&r);
                extra.push((c, r));
                let (c, r) = extra.last().unwrap();
                (c, r)
            }
        };
        let mut line = format!("Dim {dim}:");
        for s in factors(3) {
            let (lo, hi) = band(config, result, &s, BANDS_ROUNDS);
            let ok = lo > 0.0 || hi < 0.0;
            passed &= ok;
            line.push_str(&format!(
                " F{} [{lo:+.4},{hi:+.4}]{}",
                s_mode(&s) + 1,
                if ok { "" } else { " MISS" }
            ));
        }
        let (lo, hi) = band(config, result, &ic, BANDS_ROUNDS);
        let ok = lo <= 0.0 && hi >= 0.0;
        passed &= ok;
        line.push_str(&format!(
            " IC [{lo:+.4},{hi:+.4}]{}",
            if ok { "" } else { " MISS" }
        ));
        parts.push(line);
    }
    Outcome {
        passed,
        detail: format!(
            "{BANDS_ROUNDS} rounds, 95% empirical bias bands: {}",
            parts.join("; ")
        ),
    }
}

fn s_mode(s: &EstimatorSpec) -> usize {
    match s {
        EstimatorSpec::Factor { mode } => *mode,
        _ => unreachable!("factor specs only"),
    }
}

fn property_suite(non_psd_total: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut parts = Vec::new();
    let mut all = true;
    let families = [KernelFamily::Gaussian, KernelFamily::Indicator];

    let (mut ok, mut worst) = (0, 0.0f64);
    for i in 0..INSTANCES {
        let p = random_matrix(rng.random_range(2..=30), rng.random_range(1..=3), &mut rng);
        let h = rng.random_range(0.05..3.0);
        let (w, _) = kernel_weights(&p, families[i % 2], h);
        let err = w
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        let nonneg = w.iter().all(|&v| v >= 0.0);
        worst = worst.max(err);
        ok += usize::from(err < 1e-12 && nonneg);
    }
    all &= ok == INSTANCES;
    parts.push(tally("row sums", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for i in 0..INSTANCES {
        let c = rng.random_range(1..=3);
        let p = random_matrix(rng.random_range(2..=25), c, &mut rng);
        let q = orthonormal(c, c, &mut rng);
        let h = rng.random_range(0.2..3.0);
        let (w1, _) = kernel_weights(&p, families[i % 2], h);
        let (w2, _) = kernel_weights(&(&p * &q), families[i % 2], h);
        let err = (&w1 - &w2).amax();
        worst = worst.max(err);
        ok += usize::from(err < 1e-10);
    }
    all &= ok == INSTANCES;
    parts.push(tally("rotation invariance", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..INSTANCES {
        let shape = random_shape(&mut rng, 2, 4, 2, 6);
        let t = random_tensor(&shape, &mut rng);
        let proxies = ProxySet::from_user(
            shape.len(),
            shape
                .iter()
                .enumerate()
                .map(|(n, &s)| (n, Matrix::zeros(s, 1)))
                .collect(),
        )
        .unwrap();
        let spec = KernelSpec::shared(KernelFamily::Indicator, 1.0).unwrap();
        let modes: Vec<usize> = (0..shape.len()).collect();
        let w = build_weights(&proxies, &spec, &modes).unwrap();
        let err = max_abs_diff(
            &weighted_within(&t, &plain_projection(&w)).unwrap(),
            &standard_within(&t),
        ) / scale_of(&t);
        worst = worst.max(err);
        ok += usize::from(err < 1e-12);
    }
    all &= ok == INSTANCES;
    parts.push(tally("uniform reduction", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for i in 0..INSTANCES {
        let n = rng.random_range(3..=20);
        let w = if i % 2 == 0 {
            let groups = rng.random_range(1..=n);
            let p = Matrix::from_fn(n, 1, |r, _| (r % groups) as f64);
            kernel_weights(&p, KernelFamily::Indicator, 0.5).0
        } else {
            let p = random_matrix(n, 2, &mut rng);
            let mut w = kernel_weights(&p, KernelFamily::Gaussian, 1.0).0;
            // a rank-deficient weight matrix exercises the pseudo-inverse cut-off
            let keep = rng.random_range(1..n);
            w.columns_mut(keep, n - keep).fill(0.0);
            w
        };
        let m = complement_projector(&w);
        let err = (&m * &m - &m).amax().max((&m - m.transpose()).amax());
        worst = worst.max(err);
        ok += usize::from(err < 1e-10);
    }
    all &= ok == INSTANCES;
    parts.push(tally("keropt idempotence", ok, worst));

    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..INSTANCES {
        let shape = random_shape(&mut rng, 2, 3, 3, 7);
        let k = rng.random_range(1..=3);
        let eta: Vec<Tensor> = (0..k).map(|_| random_tensor(&shape, &mut rng)).collect();
        let resid = random_tensor(&shape, &mut rng);
        let lags: Vec<usize> = shape
            .iter()
            .map(|&n| rng.random_range(0..n.min(3)))
            .collect();
        let v = var_hac(&eta, &resid, &lags).unwrap();
        let min_eig = v.clone().symmetric_eigen().eigenvalues.min();
        let asym = (&v - v.transpose()).amax();
        let scale = v.amax().max(f64::MIN_POSITIVE);
        worst = worst.max((-min_eig / scale).max(0.0));
        ok += usize::from(asym <= 1e-14 * scale && min_eig >= -1e-12 * scale);
    }
    all &= ok == INSTANCES && non_psd_total == 0;
    parts.push(format!(
        "{}, MC draws with non-PSD vcov {non_psd_total}",
        tally("hac psd", ok, worst)
    ));

    let mut config = growing_config(8, 16);
    config.estimators.push(EstimatorSpec::Ik { h: 0.5 });
    config.settings.split = true;
    let betas = |threads| {
        let r = monte_carlo(
            &config,
            McRunOptions {
                threads: Some(threads),
                report_every: 5,
            },
            |_| ControlFlow::Continue(()),
        )
        .unwrap();
        r.records
            .iter()
            .flat_map(|rec| {
                rec.outcomes
                    .iter()
                    .map(|o| (o.beta.map(f64::to_bits), o.se.map(f64::to_bits)))
            })
            .collect::<Vec<_>>()
    };
    let same = betas(1) == betas(4);
    all &= same;
    parts.push(format!("threads 1 vs 4 identical: {same}"));

    Outcome {
        passed: all,
        detail: parts.join(", "),
    }
}

fn full_scale() -> Outcome {
    let mut config = growing_config(FULL_SCALE_DIM, FULL_SCALE_ROUNDS);
    config.estimators.push(EstimatorSpec::Ols);
    let mut partials = Vec::new();
    let opts = McRunOptions {
        threads: Some(1),
        report_every: 1,
    };
    let result = monte_carlo(&config, opts, |s| {
        partials.push((s.rounds_completed, s.rounds_requested, s.rows.len()));
        if partials.len() == 2 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    match result {
        Ok(r) => {
            let streamed = partials
                == vec![
                    (1, FULL_SCALE_ROUNDS, config.estimators.len()),
                    (2, FULL_SCALE_ROUNDS, config.estimators.len()),
                ];
            let finite = r
                .records
                .iter()
                .all(|rec| rec.outcomes.iter().all(|o| o.error.is_none()));
            Outcome {
                passed: streamed && finite && r.summary.rounds_completed == 2,
                detail: format!(
                    "accepted {FULL_SCALE_ROUNDS} rounds at {FULL_SCALE_DIM}^3; streamed partial summaries {:?}, stopped after {} rounds",
                    partials.iter().map(|p| p.0).collect::<Vec<_>>(),
                    r.summary.rounds_completed
                ),
            }
        }
        Err(e) => Outcome {
            passed: false,
            detail: format!("rejected: {e}"),
        },
    }
}

fn report(id: usize, name: &str, start: Instant, outcome: &Outcome) {
    println!(
        "criterion {id} [{}] {name} ({:.0}s): {}",
        if outcome.passed { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        outcome.detail
    );
}

fn main() {
    let mut results = Vec::new();
    let mut non_psd_total = 0;

    let t = Instant::now();
    let c1 = algebraic_suite();
    report(1, "algebraic suite", t, &c1);
    results.push(c1.passed);

    let t = Instant::now();
    let c2 = exact_recovery_suite();
    report(2, "exact recovery", t, &c2);
    results.push(c2.passed);

    let t = Instant::now();
    let c3 = fixed_bias(&mut non_psd_total);
    report(3, "fixed-design bias pattern", t, &c3);
    results.push(c3.passed);

    let t = Instant::now();
    let runs = GrowingRuns {
        runs: [30, 40]
            .into_iter()
            .map(|dim| {
                let c = growing_config(dim, GROWING_ROUNDS);
                let r = run(&c);
                non_psd_total += non_psd(&r);
                (dim, c, r)
            })
            .collect(),
    };
    let c4 = growing_coverage(&runs);
    report(4, "growing-design coverage", t, &c4);
    results.push(c4.passed);

    let t = Instant::now();
    let c5 = bias_bands(&runs, &mut non_psd_total);
    report(5, "bias band sign pattern", t, &c5);
    results.push(c5.passed);

    let t = Instant::now();
    let c6 = property_suite(non_psd_total);
    report(6, "property suite", t, &c6);
    results.push(c6.passed);

    let t = Instant::now();
    let c7 = full_scale();
    report(7, "full-scale parameters", t, &c7);
    results.push(c7.passed);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    let strict = std::env::var("MDIFE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed != results.len() {
        std::process::exit(1);
    }
}
