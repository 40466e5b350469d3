//! Kernel-weighted within transformations.
//!
//! Each mode gets a row-stochastic weight matrix `W_n` built from kernel
//! similarities between proxy rows. The transformation applies `M_n` along
//! every weighted mode, where `M_n` is either `I − W_n` ([`plain_projection`])
//! or the orthogonal projector onto the complement of the column space of
//! `W_n` ([`keropt_projection`]). Pooled OLS on the transformed data gives the
//! kernel-weighted fixed-effects slope ([`ker_estimate`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::ProxySet;
use crate::regression::{check_regressors, pooled_ols};
use crate::tensor::{multi_mode_product, truncated_svd, Matrix, Tensor};

/// Kernel shape `k(u)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(−u²)`.
    Gaussian,
    /// `1{|u| < 1}`.
    Indicator,
}

impl KernelFamily {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-u * u).exp(),
            KernelFamily::Indicator => {
                if u.abs() < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "indicator" => Ok(KernelFamily::Indicator),
            other => Err(Error::InvalidArgument(format!("unknown kernel '{other}'"))),
        }
    }
}

/// `k(u)` for the given family.
pub fn kernel_eval(family: KernelFamily, u: f64) -> f64 {
    family.eval(u)
}

/// Kernel family with per-mode bandwidths in standardised-proxy units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Either one bandwidth shared by every mode or one per mode.
    pub bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::InvalidArgument("no bandwidth given".into()));
        }
        if let Some(h) = bandwidths.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "bandwidths must be positive and finite, got {h}"
            )));
        }
        Ok(KernelSpec { family, bandwidths })
    }

    /// The same bandwidth in every mode.
    pub fn shared(family: KernelFamily, h: f64) -> Result<Self> {
        Self::new(family, vec![h])
    }

    pub fn bandwidth(&self, mode: usize) -> Result<f64> {
        match self.bandwidths.len() {
            1 => Ok(self.bandwidths[0]),
            _ => self.bandwidths.get(mode).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no bandwidth for mode {mode}; {} were given",
                    self.bandwidths.len()
                ))
            }),
        }
    }
}

/// How scalar proxy differences enter the kernel in the entrywise weights
/// of [`iterative_projection`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarDistance {
    /// `k(|u_i − u_j| / h)`, the one-column case of the vector weights.
    #[default]
    Absolute,
    /// `k((u_i − u_j)² / h)`.
    Squared,
}

/// Per-mode weight matrices with the rows whose kernel neighbourhood is
/// empty apart from the row itself.
#[derive(Clone, Debug)]
pub struct WeightSet {
    pub weights: Vec<Option<Matrix>>,
    pub degenerate_rows: Vec<Vec<usize>>,
}

impl WeightSet {
    pub fn get(&self, mode: usize) -> Option<&Matrix> {
        self.weights.get(mode).and_then(|w| w.as_ref())
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate_rows.iter().map(Vec::len).sum()
    }
}

/// Off-diagonal kernel mass below this fraction of `k(0)` marks a row as
/// degenerate.
const DEGENERATE_MASS: f64 = 1e-12;

fn normalise_rows(mut k: Matrix, k0: f64) -> (Matrix, Vec<usize>) {
    let n = k.nrows();
    let mut degenerate = Vec::new();
    for i in 0..n {
        let total: f64 = k.row(i).sum();
        if total - k[(i, i)] < DEGENERATE_MASS * k0 {
            degenerate.push(i);
        }
        k.row_mut(i).scale_mut(1.0 / total);
    }
    (k, degenerate)
}

/// Kernel weights `W_ij = k(‖U_i − U_j‖/h) / Σ_j' k(‖U_i − U_j'‖/h)` for
/// the rows of one proxy matrix, together with the degenerate rows. The self
/// term is part of both the numerator and the denominator, so every row has
/// positive mass.
pub fn kernel_weights(proxies: &Matrix, family: KernelFamily, h: f64) -> (Matrix, Vec<usize>) {
    let n = proxies.nrows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = family.eval(0.0);
        for j in 0..i {
            let d = (proxies.row(i) - proxies.row(j)).norm();
            let v = family.eval(d / h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    normalise_rows(k, family.eval(0.0))
}

fn scalar_weights(
    column: &[f64],
    family: KernelFamily,
    h: f64,
    distance: ScalarDistance,
) -> (Matrix, Vec<usize>) {
    let n = column.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = family.eval(0.0);
        for j in 0..i {
            let diff = (column[i] - column[j]).abs();
            let d = match distance {
                ScalarDistance::Absolute => diff,
                ScalarDistance::Squared => diff * diff,
            };
            let v = family.eval(d / h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    normalise_rows(k, family.eval(0.0))
}

fn check_proxy_rows(proxies: &Matrix, mode: usize, size: Option<usize>) -> Result<()> {
    if proxies.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "mode {mode} needs at least two proxy rows"
        )));
    }
    if let Some(n) = size {
        if proxies.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "mode {mode} has {n} indices but {} proxy rows",
                proxies.nrows()
            )));
        }
    }
    Ok(())
}

/// Weight matrices for every mode in `modes`.
///
/// Fails with [`Error::DegenerateDimension`] when every row of a mode is
/// degenerate, since the transformation would then remove all observations.
pub fn build_weights(proxies: &ProxySet, spec: &KernelSpec, modes: &[usize]) -> Result<WeightSet> {
    let order = proxies.order();
    let mut weights = vec![None; order];
    let mut degenerate_rows = vec![Vec::new(); order];
    for &n in modes {
        if n >= order {
            return Err(Error::ModeOutOfRange { mode: n, order });
        }
        let p = proxies
            .get(n)
            .ok_or_else(|| Error::InvalidArgument(format!("no proxies available for mode {n}")))?;
        check_proxy_rows(p, n, None)?;
        let (w, deg) = kernel_weights(p, spec.family, spec.bandwidth(n)?);
        if deg.len() == w.nrows() {
            return Err(Error::DegenerateDimension {
                dim: n,
                size: w.nrows(),
            });
        }
        weights[n] = Some(w);
        degenerate_rows[n] = deg;
    }
    Ok(WeightSet {
        weights,
        degenerate_rows,
    })
}

/// Which transformation a [`ProjectionSet`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionVariant {
    /// `I − W_n`.
    Plain,
    /// `I − W_n (W_n'W_n)^† W_n'`.
    Optimal,
    /// `Π_m (I − W_{n,m})` over entrywise weights.
    Iterative,
    /// Matrices supplied by the caller.
    Custom,
}

/// Per-mode transformation matrices; modes without one are left untouched.
#[derive(Clone, Debug)]
pub struct ProjectionSet {
    pub matrices: Vec<Option<Matrix>>,
    pub variant: ProjectionVariant,
    pub degenerate_rows: usize,
}

impl ProjectionSet {
    /// Leaves every mode of an order-`order` tensor unchanged.
    pub fn identity(order: usize) -> Self {
        ProjectionSet {
            matrices: vec![None; order],
            variant: ProjectionVariant::Custom,
            degenerate_rows: 0,
        }
    }

    pub fn custom(matrices: Vec<Option<Matrix>>) -> Self {
        ProjectionSet {
            matrices,
            variant: ProjectionVariant::Custom,
            degenerate_rows: 0,
        }
    }

    pub fn get(&self, mode: usize) -> Option<&Matrix> {
        self.matrices.get(mode).and_then(|m| m.as_ref())
    }

    /// The same set with mode `mode`'s matrix replaced.
    pub fn with_mode(mut self, mode: usize, m: Option<Matrix>) -> Self {
        self.matrices[mode] = m;
        self
    }
}

/// `M_n = I − W_n`.
pub fn plain_projection(w: &WeightSet) -> ProjectionSet {
    let matrices = w
        .weights
        .iter()
        .map(|w| {
            w.as_ref()
                .map(|w| Matrix::identity(w.nrows(), w.ncols()) - w)
        })
        .collect();
    ProjectionSet {
        matrices,
        variant: ProjectionVariant::Plain,
        degenerate_rows: w.degenerate_count(),
    }
}

/// Relative singular-value cut-off of the pseudo-inverse in
/// [`keropt_projection`].
pub const KEROPT_RANK_TOL: f64 = 1e-10;

/// Orthogonal projector onto the complement of the column space of `w`.
pub fn complement_projector(w: &Matrix) -> Matrix {
    let n = w.nrows();
    let k = n.min(w.ncols());
    let svd = truncated_svd(w, k).expect("weight matrices are finite and non-empty");
    let top = svd.s[0];
    let r = svd.s.iter().filter(|&&s| s > KEROPT_RANK_TOL * top).count();
    let u = svd.u.columns(0, r);
    let mut m = Matrix::identity(n, n) - u * u.transpose();
    // exact symmetry
    m = (&m + m.transpose()) * 0.5;
    m
}

/// `M_n = I − W_n (W_n'W_n)^† W_n'`, the orthogonal projector that partials
/// out the weighted fixed-effect columns of each mode.
pub fn keropt_projection(w: &WeightSet) -> ProjectionSet {
    let matrices = w
        .weights
        .iter()
        .map(|w| w.as_ref().map(complement_projector))
        .collect();
    ProjectionSet {
        matrices,
        variant: ProjectionVariant::Optimal,
        degenerate_rows: w.degenerate_count(),
    }
}

/// Entrywise weights: for each mode `n` one scalar weight matrix per proxy
/// column `m < ranks[n]`, composed as `M_n = Π_m (I − W_{n,m})`. A zero rank
/// leaves the mode untouched.
pub fn iterative_projection(
    proxies: &ProxySet,
    ranks: &[usize],
    spec: &KernelSpec,
    distance: ScalarDistance,
) -> Result<ProjectionSet> {
    let order = proxies.order();
    if ranks.len() != order {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks supplied for a tensor of order {order}",
            ranks.len()
        )));
    }
    let mut matrices = vec![None; order];
    let mut degenerate = 0;
    for (n, &r) in ranks.iter().enumerate() {
        if r == 0 {
            continue;
        }
        let p = proxies
            .get(n)
            .ok_or_else(|| Error::InvalidArgument(format!("no proxies available for mode {n}")))?;
        check_proxy_rows(p, n, None)?;
        if r > p.ncols() {
            return Err(Error::RankOutOfRange {
                rank: r,
                max: p.ncols(),
                context: format!("for the proxies of mode {n}"),
            });
        }
        let h = spec.bandwidth(n)?;
        let size = p.nrows();
        let mut m = Matrix::identity(size, size);
        for col in 0..r {
            let column: Vec<f64> = p.column(col).iter().copied().collect();
            let (w, deg) = scalar_weights(&column, spec.family, h, distance);
            if deg.len() == size {
                return Err(Error::DegenerateDimension { dim: n, size });
            }
            degenerate += deg.len();
            m = (Matrix::identity(size, size) - w) * m;
        }
        matrices[n] = Some(m);
    }
    Ok(ProjectionSet {
        matrices,
        variant: ProjectionVariant::Iterative,
        degenerate_rows: degenerate,
    })
}

/// `t ×_1 M_1 ×_2 … ×_d M_d` over the modes that carry a matrix.
pub fn weighted_within(t: &Tensor, p: &ProjectionSet) -> Result<Tensor> {
    if p.matrices.len() != t.order() {
        return Err(Error::ShapeMismatch(format!(
            "projection set of order {} applied to a tensor of order {}",
            p.matrices.len(),
            t.order()
        )));
    }
    for (n, m) in p.matrices.iter().enumerate() {
        if let Some(m) = m {
            let size = t.shape()[n];
            if m.nrows() != size || m.ncols() != size {
                return Err(Error::ShapeMismatch(format!(
                    "mode {n} has {size} indices but its matrix is {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
    }
    let refs: Vec<Option<&Matrix>> = p.matrices.iter().map(|m| m.as_ref()).collect();
    multi_mode_product(t, &refs)
}

/// Averages `t` along `mode` and broadcasts the mean back over that mode.
fn mean_along(t: &Tensor, mode: usize) -> Tensor {
    let (left, n, right) = t.mode_split(mode);
    let data = t.data();
    let mut out = vec![0.0; data.len()];
    for r in 0..right {
        for l in 0..left {
            let mut s = 0.0;
            for i in 0..n {
                s += data[l + left * (i + n * r)];
            }
            let mean = s / n as f64;
            for i in 0..n {
                out[l + left * (i + n * r)] = mean;
            }
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

/// The additive within transformation: the alternating sum, over every
/// subset of modes, of the means of `t` taken over that subset. It removes
/// every term that is constant along at least one mode.
pub fn standard_within(t: &Tensor) -> Tensor {
    let d = t.order();
    let mut acc = vec![0.0; t.len()];
    for subset in 0u32..(1u32 << d) {
        let mut m = t.clone();
        for n in 0..d {
            if subset & (1 << n) != 0 {
                m = mean_along(&m, n);
            }
        }
        let sign = if subset.count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        for (a, v) in acc.iter_mut().zip(m.data()) {
            *a += sign * v;
        }
    }
    Tensor::from_parts(t.shape().to_vec(), acc)
}

/// Slopes from pooled OLS on transformed data, with the transformed data.
#[derive(Clone, Debug)]
pub struct KerFit {
    pub beta: Vec<f64>,
    pub y_tilde: Tensor,
    pub x_tilde: Vec<Tensor>,
    /// `Ỹ − Σ_k X̃_k β̂_k`.
    pub residual: Tensor,
    pub condition: f64,
    pub ill_conditioned: bool,
}

/// Transforms `y` and every regressor with `p`, then runs pooled OLS.
pub fn ker_estimate(y: &Tensor, xs: &[Tensor], p: &ProjectionSet) -> Result<KerFit> {
    check_regressors(y, xs)?;
    let y_tilde = weighted_within(y, p)?;
    let x_tilde = xs
        .iter()
        .map(|x| weighted_within(x, p))
        .collect::<Result<Vec<_>>>()?;
    for (k, (x, xt)) in xs.iter().zip(&x_tilde).enumerate() {
        let before = x.dot(x);
        if xt.dot(xt) <= 1e-20 * before || before == 0.0 {
            return Err(Error::DegenerateRegressors(format!(
                "regressor {k} is annihilated by the weighted within transformation"
            )));
        }
    }
    let fit = pooled_ols(&y_tilde, &x_tilde)?;
    let residual = crate::regression::residualize(&y_tilde, &x_tilde, &fit.beta);
    Ok(KerFit {
        beta: fit.beta,
        y_tilde,
        x_tilde,
        residual,
        condition: fit.condition,
        ill_conditioned: fit.ill_conditioned,
    })
}

/// [`ker_estimate`] with the entrywise projection of
/// [`iterative_projection`].
pub fn iterative_kwfe(
    y: &Tensor,
    xs: &[Tensor],
    proxies: &ProxySet,
    ranks: &[usize],
    spec: &KernelSpec,
    distance: ScalarDistance,
) -> Result<KerFit> {
    let p = iterative_projection(proxies, ranks, spec, distance)?;
    ker_estimate(y, xs, &p)
}
