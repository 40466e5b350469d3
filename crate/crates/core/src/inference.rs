//! Inference-corrected slope estimation and its variance estimators.
//!
//! The regressors are split into a low-multilinear-rank part `Γ̂_X` and a
//! remainder `η̂ = X − Γ̂_X`. With a preliminary slope `β̃` and a low-rank
//! estimate `𝒜̂` of the fixed effects, the outcome's counterpart is
//! `Γ̂_Y = Γ̂_X β̃ + 𝒜̂`, and the corrected slope regresses `Y − Γ̂_Y` on `η̂`.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{psd_project, sym_condition, sym_pinv};
use crate::regression::{
    check_regressors, linear_combination, regressor_cross, regressor_gram, residualize,
};
use crate::tensor::{
    increment_index, low_rank_approx, mode_gram, mode_product, scatter_indices, select_indices,
    Matrix, Tensor,
};

/// `Γ̂_{X_k}`: each regressor truncated at multilinear rank `ranks`. Zero
/// ranks give zero tensors.
pub fn estimate_gamma_x(xs: &[Tensor], ranks: &[usize]) -> Result<Vec<Tensor>> {
    xs.iter().map(|x| low_rank_approx(x, ranks)).collect()
}

/// The orthogonalised representation used by [`ic_estimate`].
#[derive(Clone, Debug)]
pub struct Orthogonalization {
    pub gamma_x: Vec<Tensor>,
    pub gamma_y: Tensor,
    pub a_hat: Tensor,
    pub beta_tilde: Vec<f64>,
    pub eta_hat: Vec<Tensor>,
}

impl Orthogonalization {
    /// Assembles the representation from its ingredients, with
    /// `Γ̂_Y = Σ_k Γ̂_{X_k} β̃_k + 𝒜̂` and `η̂ = X − Γ̂_X`.
    pub fn from_parts(
        xs: &[Tensor],
        gamma_x: Vec<Tensor>,
        a_hat: Tensor,
        beta_tilde: Vec<f64>,
    ) -> Result<Self> {
        check_regressors(&a_hat, xs)?;
        check_regressors(&a_hat, &gamma_x)?;
        if gamma_x.len() != xs.len() || beta_tilde.len() != xs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} regressors, {} gamma tensors and {} preliminary slopes",
                xs.len(),
                gamma_x.len(),
                beta_tilde.len()
            )));
        }
        let gamma_y = linear_combination(&gamma_x, &beta_tilde).add(&a_hat)?;
        let eta_hat = xs
            .iter()
            .zip(&gamma_x)
            .map(|(x, g)| x.sub(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Orthogonalization {
            gamma_x,
            gamma_y,
            a_hat,
            beta_tilde,
            eta_hat,
        })
    }

    /// `Γ̂_X` at ranks `gamma_ranks` and `𝒜̂` as the truncation of
    /// `Y − Xβ̃` at ranks `a_ranks`.
    pub fn estimate(
        y: &Tensor,
        xs: &[Tensor],
        beta_tilde: &[f64],
        gamma_ranks: &[usize],
        a_ranks: &[usize],
    ) -> Result<Self> {
        check_regressors(y, xs)?;
        let gamma_x = estimate_gamma_x(xs, gamma_ranks)?;
        let a_hat = low_rank_approx(&residualize(y, xs, beta_tilde), a_ranks)?;
        Self::from_parts(xs, gamma_x, a_hat, beta_tilde.to_vec())
    }
}

/// Slope of the inference-corrected regression with the pieces needed by
/// the variance estimators.
#[derive(Clone, Debug)]
pub struct IcFit {
    pub beta: Vec<f64>,
    /// `Ω̂_X = N⁻¹ vec_K(η̂)' vec_K(η̂)`.
    pub omega: Matrix,
    pub omega_condition: f64,
    /// `ε̂ = Y − Xβ̂ − 𝒜̂`.
    pub residual: Tensor,
    pub eta_hat: Vec<Tensor>,
}

/// `β̂_IC = (η̂'η̂)⁻¹ η̂' vec(Y − Γ̂_Y)`.
pub fn ic_estimate(y: &Tensor, xs: &[Tensor], orth: &Orthogonalization) -> Result<IcFit> {
    check_regressors(y, xs)?;
    check_regressors(y, &orth.eta_hat)?;
    if orth.gamma_y.shape() != y.shape() || orth.a_hat.shape() != y.shape() {
        return Err(Error::ShapeMismatch(
            "orthogonalisation does not match the outcome".into(),
        ));
    }
    let omega = omega_hat(&orth.eta_hat);
    let omega_condition = sym_condition(&omega);
    let inv = checked_inverse(&omega, omega_condition)?;
    let target = y.sub(&orth.gamma_y)?;
    let n = y.len() as f64;
    let rhs = regressor_cross(&orth.eta_hat, &target) / n;
    let beta: Vec<f64> = (inv * rhs).iter().copied().collect();
    let residual = residualize(y, xs, &beta).sub(&orth.a_hat)?;
    Ok(IcFit {
        beta,
        omega,
        omega_condition,
        residual,
        eta_hat: orth.eta_hat.clone(),
    })
}

/// Condition numbers above this make `Ω̂_X` unusable.
const SINGULAR_CONDITION: f64 = 1e14;

fn omega_hat(eta: &[Tensor]) -> Matrix {
    let n = eta.first().map_or(1, |e| e.len()) as f64;
    regressor_gram(eta) / n
}

fn checked_inverse(omega: &Matrix, condition: f64) -> Result<Matrix> {
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(Error::Singular(format!(
            "Ω̂_X has condition number {condition:e}"
        )));
    }
    Ok(sym_pinv(omega, 0.0))
}

/// Variance model for the slope estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum VarianceModel {
    Homoskedastic,
    Heteroskedastic,
    /// Product-Bartlett weights with per-mode truncation lags.
    Hac {
        lags: Vec<usize>,
    },
}

impl VarianceModel {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceModel::Homoskedastic => "homo",
            VarianceModel::Heteroskedastic => "hetero",
            VarianceModel::Hac { .. } => "hac",
        }
    }

    pub fn vcov(&self, eta: &[Tensor], resid: &Tensor) -> Result<Matrix> {
        match self {
            VarianceModel::Homoskedastic => var_homoskedastic(eta, resid),
            VarianceModel::Heteroskedastic => var_heteroskedastic(eta, resid),
            VarianceModel::Hac { lags } => var_hac(eta, resid, lags),
        }
    }
}

fn check_variance_inputs(eta: &[Tensor], resid: &Tensor) -> Result<Matrix> {
    check_regressors(resid, eta)?;
    let omega = omega_hat(eta);
    checked_inverse(&omega, sym_condition(&omega))
}

/// `σ̂²_ε Ω̂_X⁻¹ / N` with `σ̂²_ε = N⁻¹ Σ ε̂²`.
pub fn var_homoskedastic(eta: &[Tensor], resid: &Tensor) -> Result<Matrix> {
    let inv = check_variance_inputs(eta, resid)?;
    let n = resid.len() as f64;
    let sigma2 = resid.dot(resid) / n;
    Ok(psd_project(&(inv * (sigma2 / n))))
}

/// Per-cell scores `ε̂_i η̂_i`, stored cell-major.
fn scores(eta: &[Tensor], resid: &Tensor) -> Vec<f64> {
    let k = eta.len();
    let mut out = vec![0.0; resid.len() * k];
    for (j, e) in eta.iter().enumerate() {
        for (i, (&ei, &ri)) in e.data().iter().zip(resid.data()).enumerate() {
            out[i * k + j] = ei * ri;
        }
    }
    out
}

fn sandwich(inv: &Matrix, middle: &Matrix, n: f64) -> Matrix {
    psd_project(&(inv * middle * inv / n))
}

/// `Ω̂_X⁻¹ Σ̂ Ω̂_X⁻¹ / N` with `Σ̂ = N⁻¹ Σ_i ε̂_i² η̂_i η̂_i'`.
pub fn var_heteroskedastic(eta: &[Tensor], resid: &Tensor) -> Result<Matrix> {
    let zeros = vec![0; resid.order()];
    var_hac(eta, resid, &zeros)
}

/// Heteroskedasticity and correlation robust variance: the middle matrix
/// sums the cross-moments `N⁻¹ Σ_i ε̂_i ε̂_{i+s} η̂_i η̂_{i+s}'` over index
/// offsets with `|s_n| ≤ lags[n]`, weighted by `Π_n (1 − |s_n|/(lags[n]+1))`.
pub fn var_hac(eta: &[Tensor], resid: &Tensor, lags: &[usize]) -> Result<Matrix> {
    let inv = check_variance_inputs(eta, resid)?;
    let shape = resid.shape().to_vec();
    if lags.len() != shape.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} lags supplied for a tensor of order {}",
            lags.len(),
            shape.len()
        )));
    }
    for (n, (&l, &size)) in lags.iter().zip(&shape).enumerate() {
        if l >= size {
            return Err(Error::InvalidArgument(format!(
                "lag {l} for mode {n} needs more than {size} indices"
            )));
        }
    }
    let k = eta.len();
    let u = scores(eta, resid);
    let strides: Vec<usize> = shape
        .iter()
        .scan(1usize, |acc, &n| {
            let s = *acc;
            *acc *= n;
            Some(s)
        })
        .collect();
    let mut middle = Matrix::zeros(k, k);
    // offsets s range over the box Π [−L_n, L_n]; stored shifted by L_n
    let spans: Vec<usize> = lags.iter().map(|&l| 2 * l + 1).collect();
    let mut off = vec![0usize; shape.len()];
    let total: usize = spans.iter().product();
    for _ in 0..total {
        let s: Vec<isize> = off
            .iter()
            .zip(lags)
            .map(|(&o, &l)| o as isize - l as isize)
            .collect();
        let weight: f64 = s
            .iter()
            .zip(lags)
            .map(|(&si, &l)| 1.0 - si.unsigned_abs() as f64 / (l + 1) as f64)
            .product();
        let moment = cross_moment(&u, k, &shape, &strides, &s);
        middle += moment * weight;
        increment_index(&mut off, &spans);
    }
    let n = resid.len() as f64;
    Ok(sandwich(&inv, &(middle / n), n))
}

/// `Σ_i u_i u_{i+s}'` over cells where both ends lie inside the array.
fn cross_moment(u: &[f64], k: usize, shape: &[usize], strides: &[usize], s: &[isize]) -> Matrix {
    let d = shape.len();
    let lo: Vec<usize> = s
        .iter()
        .map(|&v| if v < 0 { (-v) as usize } else { 0 })
        .collect();
    let hi: Vec<usize> = s
        .iter()
        .zip(shape)
        .map(|(&v, &n)| if v > 0 { n - v as usize } else { n })
        .collect();
    let mut m = Matrix::zeros(k, k);
    if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
        return m;
    }
    let shift: isize = s.iter().zip(strides).map(|(&v, &st)| v * st as isize).sum();
    let extent: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
    let mut idx = vec![0usize; d];
    let count: usize = extent.iter().product();
    let run = extent[0];
    // walk the first mode contiguously
    let outer = count / run;
    for _ in 0..outer {
        let base: usize = (0..d).map(|n| (idx[n] + lo[n]) * strides[n]).sum();
        for i0 in 0..run {
            let a = base + i0;
            let b = (a as isize + shift) as usize;
            let ua = &u[a * k..(a + 1) * k];
            let ub = &u[b * k..(b + 1) * k];
            for p in 0..k {
                for q in 0..k {
                    m[(p, q)] += ua[p] * ub[q];
                }
            }
        }
        idx[0] = run - 1;
        increment_index(&mut idx, &extent);
    }
    m
}

/// Standard normal critical value for a two-sided interval at `level`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(z.inverse_cdf(0.5 + level / 2.0))
}

/// Estimator settings echoed in a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub estimator: String,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub bandwidths: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ranks: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flatten_dim: Option<usize>,
    pub split: bool,
}

/// Fit diagnostics echoed in a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Condition number of the regressor moment matrix actually inverted.
    pub omega_condition: f64,
    /// `N⁻¹ Σ ε̂²`.
    pub sigma2: f64,
    pub degenerate_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub converged: Option<bool>,
}

/// Slopes with standard errors and normal confidence intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub level: f64,
    pub vcov: Vec<Vec<f64>>,
    pub variance_model: String,
    pub method: MethodInfo,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub fn new(
        beta: Vec<f64>,
        vcov: &Matrix,
        level: f64,
        variance_model: &VarianceModel,
        method: MethodInfo,
        diagnostics: Diagnostics,
    ) -> Result<Self> {
        let k = beta.len();
        if vcov.nrows() != k || vcov.ncols() != k {
            return Err(Error::ShapeMismatch(format!(
                "{k} slopes with a {}x{} covariance matrix",
                vcov.nrows(),
                vcov.ncols()
            )));
        }
        let z = normal_critical_value(level)?;
        let se: Vec<f64> = (0..k).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
        let ci_low = beta.iter().zip(&se).map(|(b, s)| b - z * s).collect();
        let ci_high = beta.iter().zip(&se).map(|(b, s)| b + z * s).collect();
        Ok(EstimateReport {
            se,
            ci_low,
            ci_high,
            level,
            vcov: (0..k)
                .map(|i| (0..k).map(|j| vcov[(i, j)]).collect())
                .collect(),
            variance_model: variance_model.name().to_string(),
            method,
            diagnostics,
            beta,
        })
    }

    /// Whether every interval contains the matching entry of `truth`.
    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        truth
            .iter()
            .zip(self.ci_low.iter().zip(&self.ci_high))
            .map(|(t, (lo, hi))| lo <= t && t <= hi)
            .collect()
    }
}

/// A random half-split of one mode's indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossFitSplit {
    pub mode: usize,
    /// Two disjoint sorted index sets covering the mode; sizes differ by at
    /// most one.
    pub folds: [Vec<usize>; 2],
}

/// Splits the indices of `mode` into two random halves.
pub fn crossfit_split(shape: &[usize], mode: usize, seed: u64) -> Result<CrossFitSplit> {
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    let n = shape[mode];
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "cross-fitting needs at least 4 indices along mode {mode}, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut a = idx[..n / 2].to_vec();
    let mut b = idx[n / 2..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok(CrossFitSplit {
        mode,
        folds: [a, b],
    })
}

impl CrossFitSplit {
    /// The part of `t` in fold `f`.
    pub fn fold(&self, t: &Tensor, f: usize) -> Result<Tensor> {
        select_indices(t, self.mode, &self.folds[f])
    }

    /// Reassembles per-fold tensors into the full shape.
    pub fn combine(&self, parts: [&Tensor; 2], shape: &[usize]) -> Result<Tensor> {
        scatter_indices(
            &[(&self.folds[0], parts[0]), (&self.folds[1], parts[1])],
            self.mode,
            shape,
        )
    }
}

/// Leading-subspace projectors `UU'` per mode; `None` where the rank is the
/// full mode size. A zero rank gives the zero projector.
fn mode_projectors(t: &Tensor, ranks: &[usize]) -> Result<Vec<Option<Matrix>>> {
    (0..t.order())
        .map(|n| {
            let size = t.shape()[n];
            let r = ranks[n];
            if r >= size {
                return Ok(None);
            }
            let (_, u) = crate::linalg::leading_eigvecs(&mode_gram(t, n)?, r);
            Ok(Some(&u * u.transpose()))
        })
        .collect()
}

/// Truncation of `own` whose non-split subspaces come from `other`.
fn transferred_truncation(
    own: &Tensor,
    other: &Tensor,
    mode: usize,
    ranks: &[usize],
) -> Result<Tensor> {
    if ranks.len() != own.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks supplied for a tensor of order {}",
            ranks.len(),
            own.order()
        )));
    }
    let mut projectors = mode_projectors(other, ranks)?;
    projectors[mode] = mode_projectors(own, ranks)?.swap_remove(mode);
    let mut out = own.clone();
    for (n, p) in projectors.iter().enumerate() {
        if let Some(p) = p {
            out = mode_product(&out, p, n)?;
        }
    }
    Ok(out)
}

/// Cross-fitted orthogonalisation. For each fold, `Γ̂_X` and `𝒜̂` use the
/// leading subspaces estimated on the other fold in every mode except the
/// split mode. The preliminary slope applied to a fold is the one estimated
/// on the other fold (`beta_tilde[f]` is the slope estimated on fold `f`).
/// The returned `beta_tilde` is the average of the two.
pub fn crossfit_orthogonalization(
    y: &Tensor,
    xs: &[Tensor],
    split: &CrossFitSplit,
    beta_tilde: [&[f64]; 2],
    gamma_ranks: &[usize],
    a_ranks: &[usize],
) -> Result<Orthogonalization> {
    check_regressors(y, xs)?;
    let shape = y.shape().to_vec();
    let mode = split.mode;
    let yf = [split.fold(y, 0)?, split.fold(y, 1)?];
    let xf: [Vec<Tensor>; 2] = [
        xs.iter().map(|x| split.fold(x, 0)).collect::<Result<_>>()?,
        xs.iter().map(|x| split.fold(x, 1)).collect::<Result<_>>()?,
    ];
    let mut gamma_parts: Vec<[Tensor; 2]> = Vec::with_capacity(xs.len());
    for k in 0..xs.len() {
        gamma_parts.push([
            transferred_truncation(&xf[0][k], &xf[1][k], mode, gamma_ranks)?,
            transferred_truncation(&xf[1][k], &xf[0][k], mode, gamma_ranks)?,
        ]);
    }
    let mut a_parts = Vec::with_capacity(2);
    let mut gy_parts = Vec::with_capacity(2);
    for f in 0..2 {
        let g = 1 - f;
        let bt = beta_tilde[g];
        let own = residualize(&yf[f], &xf[f], bt);
        let other = residualize(&yf[g], &xf[g], bt);
        let a = transferred_truncation(&own, &other, mode, a_ranks)?;
        let gammas: Vec<Tensor> = gamma_parts.iter().map(|p| p[f].clone()).collect();
        gy_parts.push(linear_combination(&gammas, bt).add(&a)?);
        a_parts.push(a);
    }
    let gamma_x = gamma_parts
        .iter()
        .map(|p| split.combine([&p[0], &p[1]], &shape))
        .collect::<Result<Vec<_>>>()?;
    let a_hat = split.combine([&a_parts[0], &a_parts[1]], &shape)?;
    let gamma_y = split.combine([&gy_parts[0], &gy_parts[1]], &shape)?;
    let eta_hat = xs
        .iter()
        .zip(&gamma_x)
        .map(|(x, g)| x.sub(g))
        .collect::<Result<Vec<_>>>()?;
    let avg =
        DVector::from_row_slice(beta_tilde[0]) * 0.5 + DVector::from_row_slice(beta_tilde[1]) * 0.5;
    Ok(Orthogonalization {
        gamma_x,
        gamma_y,
        a_hat,
        beta_tilde: avg.iter().copied().collect(),
        eta_hat,
    })
}
