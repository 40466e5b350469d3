//! Kernel weights from proxies and the kernel-weighted within estimator.
//!
//! Run with `cargo run --release --example kernel_weighting`.

use mdife::factor::ProxySet;
use mdife::kwfe::{
    build_weights, ker_estimate, kernel_weights, keropt_projection, plain_projection,
    standard_within, KernelFamily, KernelSpec,
};
use mdife::regression::pooled_ols;
use mdife::tensor::cp_compose;
use mdife::{Matrix, Result, Tensor};

fn main() -> Result<()> {
    let proxies = Matrix::from_column_slice(3, 1, &[0.0, 0.5, 10.0]);
    let (w, degenerate) = kernel_weights(&proxies, KernelFamily::Gaussian, 1.0);
    println!("Gaussian weights, h = 1:\n{w}rows without neighbours: {degenerate:?}");

    // fixed effects constant within groups of a grouping proxy are removed
    // exactly by group-demeaning weights
    let groups = |n: usize| Matrix::from_fn(n, 1, |i, _| (i % 3) as f64);
    let loadings = |n: usize, s: f64| Matrix::from_fn(n, 1, |i, _| s + (i % 3) as f64 * 0.7);
    let shape = [9, 6, 6];
    let a = cp_compose(&[loadings(9, 1.0), loadings(6, -0.5), loadings(6, 2.0)])?;
    let x = Tensor::from_fn(&shape, |i| {
        ((i[0] * 31 + i[1] * 17 + i[2] * 7) % 11) as f64 / 11.0
    })?
    .add(&a)?;
    let y = x.scale(1.5).add(&a)?;
    let set = ProxySet::from_user(3, vec![(0, groups(9)), (1, groups(6)), (2, groups(6))])?;
    let spec = KernelSpec::shared(KernelFamily::Indicator, 0.5)?;
    let weights = build_weights(&set, &spec, &[0, 1, 2])?;

    let ols = pooled_ols(&y, std::slice::from_ref(&x))?;
    let within = pooled_ols(&standard_within(&y), &[standard_within(&x)])?;
    let ker = ker_estimate(&y, std::slice::from_ref(&x), &plain_projection(&weights))?;
    let opt = ker_estimate(&y, std::slice::from_ref(&x), &keropt_projection(&weights))?;
    println!(
        "true slope 1.5: OLS {:.4}, within {:.4}, kernel {:.6}, kernel opt {:.6}",
        ols.beta[0], within.beta[0], ker.beta[0], opt.beta[0]
    );
    Ok(())
}
