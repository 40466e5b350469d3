//! Flattened interactive fixed-effects estimation.
//!
//! [`interactive_fe_fit`] alternates between a pooled OLS step for the slopes
//! and a truncated SVD of the residual flattening for the factor structure.
//! All iterations run on `N_n × N_n` cross-Gram matrices of the flattened
//! outcome and regressors, so the cost per iteration does not depend on the
//! size of the remaining dimensions.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{leading_eigvecs, solve_normal, sym_eigen_desc};
use crate::regression::{
    check_regressors, pooled_ols, regressor_cross, regressor_gram, residualize,
};
use crate::tensor::{
    flatten, low_rank_approx, mode_cross_gram, mode_product, unflatten, Matrix, Tensor,
};

/// Stopping rule for the alternating iteration.
#[derive(Clone, Copy, Debug)]
pub struct FactorOptions {
    /// Stop once `‖β_{t+1} − β_t‖ / max(‖β_t‖, 1)` falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FactorOptions {
    fn default() -> Self {
        FactorOptions {
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

/// Result of [`interactive_fe_fit`].
#[derive(Clone, Debug)]
pub struct FactorFit {
    pub beta: Vec<f64>,
    /// `φ̂`, `N_n × r̂`, carrying the singular-value scale.
    pub loadings: Matrix,
    /// `Γ̂`, `Π_{m≠n} N_m × r̂`, orthonormal columns.
    pub factors: Matrix,
    /// `Y − Σ_k X_k β̂_k − unflatten(φ̂ Γ̂')`.
    pub residual: Tensor,
    /// Flattening mode (0-based).
    pub mode: usize,
    pub r_hat: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Residual sum of squares at `beta`.
    pub objective: f64,
    /// Concentrated objective at every iterate, starting from pooled OLS.
    pub objective_path: Vec<f64>,
    /// Set when a slope step had to fall back to the pseudo-inverse.
    pub ill_conditioned: bool,
}

impl FactorFit {
    /// The fitted interactive term `unflatten(φ̂ Γ̂')`.
    pub fn interactive(&self, shape: &[usize]) -> Result<Tensor> {
        unflatten(
            &(&self.loadings * self.factors.transpose()),
            self.mode,
            shape,
        )
    }

    /// Regressors with the estimated factor structure partialled out on both
    /// sides of the flattening: `M_φ X_(n) M_Γ` for every regressor.
    pub fn projected_regressors(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        let phi = orthonormal_columns(&self.loadings);
        let gamma = &self.factors;
        xs.iter()
            .map(|x| {
                let m = flatten(x, self.mode)?;
                let left = &m - &phi * (phi.transpose() * &m);
                let both = &left - (&left * gamma) * gamma.transpose();
                unflatten(&both, self.mode, x.shape())
            })
            .collect()
    }
}

fn orthonormal_columns(m: &Matrix) -> Matrix {
    if m.ncols() == 0 {
        return m.clone();
    }
    m.clone().qr().q()
}

fn relative_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    (new - old).norm() / old.norm().max(1.0)
}

/// Cross-Gram matrices `Z_a Z_b'` of the mode-`mode` flattenings of
/// `Z = (Y, X_1, …, X_K)`.
struct CrossGrams {
    c: Vec<Vec<Matrix>>,
}

impl CrossGrams {
    fn new(y: &Tensor, xs: &[Tensor], mode: usize) -> Result<Self> {
        let z: Vec<&Tensor> = std::iter::once(y).chain(xs).collect();
        let k = z.len();
        let n = y.shape()[mode];
        let mut c = vec![vec![Matrix::zeros(n, n); k]; k];
        for a in 0..k {
            for b in 0..=a {
                let g = mode_cross_gram(z[a], z[b], mode)?;
                c[b][a] = g.transpose();
                c[a][b] = g;
            }
        }
        Ok(CrossGrams { c })
    }

    fn weights(beta: &DVector<f64>) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(beta.iter().map(|b| -b))
            .collect()
    }

    /// `E E'` for `E = Y_(n) − Σ_k β_k X_k(n)`.
    fn residual_gram(&self, beta: &DVector<f64>) -> Matrix {
        let w = Self::weights(beta);
        let n = self.c[0][0].nrows();
        let mut g = Matrix::zeros(n, n);
        for (a, wa) in w.iter().enumerate() {
            for (b, wb) in w.iter().enumerate() {
                g += &self.c[a][b] * (wa * wb);
            }
        }
        (&g + g.transpose()) * 0.5
    }

    /// `E X_k'` for regressor `k`.
    fn residual_cross(&self, beta: &DVector<f64>, k: usize) -> Matrix {
        let w = Self::weights(beta);
        let n = self.c[0][0].nrows();
        let mut g = Matrix::zeros(n, n);
        for (a, wa) in w.iter().enumerate() {
            g += &self.c[a][k + 1] * *wa;
        }
        g
    }
}

/// Leading eigenvectors of `gram` together with the concentrated objective
/// (sum of the trailing eigenvalues).
fn factor_step(gram: &Matrix, r: usize) -> (Matrix, Vec<f64>, f64) {
    let (values, vectors) = sym_eigen_desc(gram);
    let tail: f64 = values[r..].iter().map(|v| v.max(0.0)).sum();
    (vectors.columns(0, r).into_owned(), values, tail)
}

fn check_flattening_rank(y: &Tensor, mode: usize, r_hat: usize) -> Result<()> {
    let n = y.shape()[mode];
    let rest = y.len() / n;
    let max = n.min(rest);
    if r_hat > max {
        return Err(Error::RankOutOfRange {
            rank: r_hat,
            max,
            context: format!("for the mode-{mode} flattening of shape {:?}", y.shape()),
        });
    }
    Ok(())
}

/// Interactive fixed-effects fit on the mode-`mode` flattening with `r_hat`
/// factors. With `r_hat == 0` this is pooled OLS.
///
/// The iteration starts at pooled OLS. Failure to converge within
/// `opts.max_iter` iterations is reported through [`FactorFit::converged`];
/// the iterate with the lowest objective is returned in either case.
pub fn interactive_fe_fit(
    y: &Tensor,
    xs: &[Tensor],
    mode: usize,
    r_hat: usize,
    opts: FactorOptions,
) -> Result<FactorFit> {
    check_regressors(y, xs)?;
    y.check_mode(mode)?;
    check_flattening_rank(y, mode, r_hat)?;
    let ols = pooled_ols(y, xs)?;
    let n = y.shape()[mode];
    let rest = y.len() / n;
    if r_hat == 0 {
        let residual = residualize(y, xs, &ols.beta);
        let objective = residual.dot(&residual);
        return Ok(FactorFit {
            beta: ols.beta,
            loadings: Matrix::zeros(n, 0),
            factors: Matrix::zeros(rest, 0),
            residual,
            mode,
            r_hat,
            iterations: 0,
            converged: true,
            objective,
            objective_path: vec![objective],
            ill_conditioned: ols.ill_conditioned,
        });
    }

    let grams = CrossGrams::new(y, xs, mode)?;
    let xtx = regressor_gram(xs);
    let xty = regressor_cross(xs, y);
    let k = xs.len();

    let mut beta = DVector::from_vec(ols.beta.clone());
    let mut ill = ols.ill_conditioned;
    let (mut u, _, obj0) = factor_step(&grams.residual_gram(&beta), r_hat);
    let mut path = vec![obj0];
    let mut best = (obj0, beta.clone());
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut rhs = xty.clone();
        for j in 0..k {
            let ex = grams.residual_cross(&beta, j);
            rhs[j] -= (u.transpose() * ex * &u).trace();
        }
        let sol = solve_normal(&xtx, &rhs);
        ill |= sol.ill_conditioned;
        let change = relative_change(&sol.coef, &beta);
        beta = sol.coef;
        let (u_next, _, obj) = factor_step(&grams.residual_gram(&beta), r_hat);
        u = u_next;
        path.push(obj);
        if obj < best.0 {
            best = (obj, beta.clone());
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let beta = best.1;

    // factor structure at the selected iterate
    let beta_vec: Vec<f64> = beta.iter().copied().collect();
    let e = residualize(y, xs, &beta_vec);
    let (values, u) = leading_eigvecs(&grams.residual_gram(&beta), r_hat);
    let projected = mode_product(&e, &(&u * u.transpose()), mode)?;
    let residual = e.sub(&projected)?;
    let e_flat = flatten(&e, mode)?;
    let mut loadings = u.clone();
    let mut factors = e_flat.transpose() * &u;
    let s_top = values[0].max(0.0).sqrt();
    for j in 0..r_hat {
        let s = values[j].max(0.0).sqrt();
        loadings.column_mut(j).scale_mut(s);
        if s > 1e-12 * s_top {
            factors.column_mut(j).scale_mut(1.0 / s);
        } else {
            factors.column_mut(j).fill(0.0);
        }
    }

    // slopes are identified only if the regressors keep variation outside
    // the estimated loading space
    let mut projected_gram = xtx.clone();
    for a in 0..k {
        for b in 0..k {
            projected_gram[(a, b)] -= (u.transpose() * &grams.c[a + 1][b + 1] * &u).trace();
        }
    }
    let (pg, _) = sym_eigen_desc(&((&projected_gram + projected_gram.transpose()) * 0.5));
    let (full, _) = sym_eigen_desc(&xtx);
    if pg[k - 1] <= 1e-10 * full[0] {
        return Err(Error::DegenerateRegressors(format!(
            "regressors lie in the span of the {r_hat} estimated loadings of mode {mode}"
        )));
    }

    let objective = residual.dot(&residual);
    Ok(FactorFit {
        beta: beta_vec,
        loadings,
        factors,
        residual,
        mode,
        r_hat,
        iterations,
        converged,
        objective,
        objective_path: path,
        ill_conditioned: ill,
    })
}

/// Where a [`ProxySet`] came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProxySource {
    /// Left singular structure of a residual tensor.
    Residual,
    /// Loadings of per-mode factor fits.
    FactorLoadings,
    /// Supplied directly by the caller.
    User,
}

/// Per-mode proxy matrices, one row per index of the mode.
#[derive(Clone, Debug)]
pub struct ProxySet {
    proxies: Vec<Option<Matrix>>,
    pub source: ProxySource,
}

impl ProxySet {
    /// Builds a set from caller-supplied proxies for a tensor of order
    /// `order`. The proxies are used as given, without standardisation.
    pub fn from_user(order: usize, proxies: Vec<(usize, Matrix)>) -> Result<Self> {
        let mut slots = vec![None; order];
        for (mode, m) in proxies {
            if mode >= order {
                return Err(Error::ModeOutOfRange { mode, order });
            }
            if m.ncols() == 0 {
                return Err(Error::InvalidArgument(format!(
                    "proxies for mode {mode} have no columns"
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("proxies for mode {mode}")));
            }
            slots[mode] = Some(m);
        }
        Ok(ProxySet {
            proxies: slots,
            source: ProxySource::User,
        })
    }

    /// Standardised loadings of factor fits, one fit per mode it covers.
    /// A fit flattened at mode `n` yields the same proxies as
    /// [`extract_proxies`] applied to `Y − Xβ̂` at that mode.
    pub fn from_factor_fits(order: usize, fits: &[FactorFit]) -> Result<Self> {
        let mut slots = vec![None; order];
        for fit in fits {
            if fit.mode >= order {
                return Err(Error::ModeOutOfRange {
                    mode: fit.mode,
                    order,
                });
            }
            if fit.r_hat == 0 {
                return Err(Error::DegenerateProxy(format!(
                    "the fit for mode {} has no factors",
                    fit.mode
                )));
            }
            slots[fit.mode] = Some(standardize_columns(&fit.loadings)?);
        }
        Ok(ProxySet {
            proxies: slots,
            source: ProxySource::FactorLoadings,
        })
    }

    pub fn get(&self, mode: usize) -> Option<&Matrix> {
        self.proxies.get(mode).and_then(|p| p.as_ref())
    }

    pub fn order(&self) -> usize {
        self.proxies.len()
    }

    /// Modes that carry proxies.
    pub fn modes(&self) -> Vec<usize> {
        (0..self.proxies.len())
            .filter(|&n| self.proxies[n].is_some())
            .collect()
    }

    /// The same set restricted to the rows in `rows` of mode `mode`.
    pub fn select_rows(&self, mode: usize, rows: &[usize]) -> ProxySet {
        let mut out = self.clone();
        if let Some(Some(m)) = out.proxies.get_mut(mode) {
            *m = m.select_rows(rows);
        }
        out
    }
}

/// Centres every column and scales it to unit sample variance.
pub fn standardize_columns(m: &Matrix) -> Result<Matrix> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::DegenerateProxy(
            "at least two rows are needed to standardise".into(),
        ));
    }
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let var = col.norm_squared() / (n - 1) as f64;
        let scale = m.column(j).amax().max(f64::MIN_POSITIVE);
        if !(var.sqrt() > 1e-12 * scale) {
            return Err(Error::DegenerateProxy(format!(
                "proxy column {j} has no variation"
            )));
        }
        col.scale_mut(1.0 / var.sqrt());
    }
    Ok(out)
}

/// Proxies from the left singular structure of `residual`: for each mode in
/// `modes` the leading `ranks[n]` columns of `ÛΣ̂` of the mode flattening,
/// standardised to unit sample variance. `ranks` is indexed by mode.
pub fn extract_proxies(residual: &Tensor, modes: &[usize], ranks: &[usize]) -> Result<ProxySet> {
    if ranks.len() != residual.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks supplied for a tensor of order {}",
            ranks.len(),
            residual.order()
        )));
    }
    let mut slots = vec![None; residual.order()];
    for &n in modes {
        residual.check_mode(n)?;
        let r = ranks[n];
        check_flattening_rank(residual, n, r)?;
        if r == 0 {
            return Err(Error::RankOutOfRange {
                rank: 0,
                max: residual.shape()[n],
                context: format!("proxy rank for mode {n} must be positive"),
            });
        }
        let gram = mode_cross_gram(residual, residual, n)?;
        let (values, mut u) = leading_eigvecs(&((&gram + gram.transpose()) * 0.5), r);
        let top = values[0];
        if !(top > 0.0) || values[r - 1] <= 1e-24 * top {
            return Err(Error::DegenerateProxy(format!(
                "the mode-{n} residual flattening has rank below {r}"
            )));
        }
        for j in 0..r {
            u.column_mut(j).scale_mut(values[j].sqrt());
        }
        slots[n] = Some(standardize_columns(&u)?);
    }
    Ok(ProxySet {
        proxies: slots,
        source: ProxySource::Residual,
    })
}

/// Low-multilinear-rank estimate of the fixed-effect tensor from a residual.
pub fn fit_a_hat(residual: &Tensor, ranks: &[usize]) -> Result<Tensor> {
    low_rank_approx(residual, ranks)
}
