//! End-to-end estimators on one panel, each returning an [`EstimateReport`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{interactive_fe_fit, FactorFit, FactorOptions, ProxySet};
use crate::inference::{
    crossfit_orthogonalization, crossfit_split, ic_estimate, Diagnostics, EstimateReport,
    MethodInfo, Orthogonalization, VarianceModel,
};
use crate::kwfe::{
    build_weights, iterative_projection, ker_estimate, keropt_projection, plain_projection,
    standard_within, KerFit, KernelFamily, KernelSpec, ScalarDistance,
};
use crate::linalg::sym_condition;
use crate::regression::{check_regressors, pooled_ols, regressor_gram, residualize};
use crate::tensor::Tensor;

/// One estimator of the slope vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EstimatorSpec {
    /// Pooled OLS.
    Ols,
    /// Pooled OLS after the additive within transformation.
    Within,
    /// Interactive fixed effects on the flattening of `mode` (0-based).
    Factor { mode: usize },
    /// Kernel-weighted within with `M = I − W`.
    Ker { h: f64 },
    /// Kernel-weighted within with the orthogonal projector.
    KerOpt { h: f64 },
    /// Entrywise kernel weights, one per proxy column.
    Ik { h: f64 },
    /// Inference-corrected estimator on top of `Ker { h }`.
    Ic { h: f64 },
}

impl EstimatorSpec {
    /// Human-readable row label, with 1-based dimensions.
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Ols => "OLS".into(),
            EstimatorSpec::Within => "Fixed-effects".into(),
            EstimatorSpec::Factor { mode } => format!("Factor (dim = {})", mode + 1),
            EstimatorSpec::Ker { h } => format!("Kernel (h = {h})"),
            EstimatorSpec::KerOpt { h } => format!("Kernel Opt (h = {h})"),
            EstimatorSpec::Ik { h } => format!("Kernel Iter (h = {h})"),
            EstimatorSpec::Ic { h } => format!("Kernel Inf (h = {h})"),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Ols => "ols",
            EstimatorSpec::Within => "within",
            EstimatorSpec::Factor { .. } => "factor",
            EstimatorSpec::Ker { .. } => "ker",
            EstimatorSpec::KerOpt { .. } => "keropt",
            EstimatorSpec::Ik { .. } => "ik",
            EstimatorSpec::Ic { .. } => "ic",
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Ols | EstimatorSpec::Within => write!(f, "{}", self.name()),
            EstimatorSpec::Factor { mode } => write!(f, "factor:{}", mode + 1),
            EstimatorSpec::Ker { h }
            | EstimatorSpec::KerOpt { h }
            | EstimatorSpec::Ik { h }
            | EstimatorSpec::Ic { h } => write!(f, "{}:{h}", self.name()),
        }
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    /// Parses `ols`, `within`, `factor:<dim>` (1-based) and
    /// `ker|keropt|ik|ic:<bandwidth>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let bad = || Error::InvalidArgument(format!("cannot parse estimator '{s}'"));
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())
        };
        match name {
            "ols" if arg.is_none() => Ok(EstimatorSpec::Ols),
            "within" if arg.is_none() => Ok(EstimatorSpec::Within),
            "factor" => {
                let dim: usize = arg.ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if dim == 0 {
                    return Err(bad());
                }
                Ok(EstimatorSpec::Factor { mode: dim - 1 })
            }
            "ker" => Ok(EstimatorSpec::Ker { h: num(arg)? }),
            "keropt" => Ok(EstimatorSpec::KerOpt { h: num(arg)? }),
            "ik" => Ok(EstimatorSpec::Ik { h: num(arg)? }),
            "ic" => Ok(EstimatorSpec::Ic { h: num(arg)? }),
            _ => Err(bad()),
        }
    }
}

/// Settings shared by every estimator in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    /// Factor count of the flattened factor estimators.
    pub factor_rank: usize,
    /// Factor count of the per-mode fits that supply kernel proxies.
    pub proxy_rank: Vec<usize>,
    pub kernel: KernelFamily,
    /// Per-mode bandwidths that replace the estimator's shared bandwidth.
    pub mode_bandwidths: Option<Vec<f64>>,
    /// Multilinear ranks of `Γ̂_X`; defaults to `proxy_rank`.
    pub gamma_ranks: Option<Vec<usize>>,
    /// Multilinear ranks of `𝒜̂`; defaults to `proxy_rank`.
    pub a_ranks: Option<Vec<usize>>,
    pub variance: VarianceModel,
    pub level: f64,
    /// Cross-fit the inference correction over a random half-split.
    pub split: bool,
    pub split_mode: usize,
    pub split_seed: u64,
    pub distance: ScalarDistance,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            factor_rank: 2,
            proxy_rank: vec![2],
            kernel: KernelFamily::Gaussian,
            mode_bandwidths: None,
            gamma_ranks: None,
            a_ranks: None,
            variance: VarianceModel::Hac { lags: vec![1] },
            level: 0.95,
            split: false,
            split_mode: 0,
            split_seed: 0,
            distance: ScalarDistance::Absolute,
            tol: FactorOptions::default().tol,
            max_iter: FactorOptions::default().max_iter,
        }
    }
}

fn broadcast(v: &[usize], order: usize, what: &str) -> Result<Vec<usize>> {
    match v.len() {
        1 => Ok(vec![v[0]; order]),
        n if n == order => Ok(v.to_vec()),
        n => Err(Error::InvalidArgument(format!(
            "{what} needs 1 or {order} entries, got {n}"
        ))),
    }
}

impl PipelineSettings {
    fn factor_options(&self) -> FactorOptions {
        FactorOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn proxy_ranks(&self, order: usize) -> Result<Vec<usize>> {
        broadcast(&self.proxy_rank, order, "proxy_rank")
    }

    pub fn gamma_ranks(&self, order: usize) -> Result<Vec<usize>> {
        match &self.gamma_ranks {
            Some(r) => broadcast(r, order, "gamma_ranks"),
            None => self.proxy_ranks(order),
        }
    }

    pub fn a_ranks(&self, order: usize) -> Result<Vec<usize>> {
        match &self.a_ranks {
            Some(r) => broadcast(r, order, "a_ranks"),
            None => self.proxy_ranks(order),
        }
    }

    /// The variance model with HAC lags broadcast to `order` modes.
    fn variance_for(&self, order: usize) -> Result<VarianceModel> {
        Ok(match &self.variance {
            VarianceModel::Hac { lags } => VarianceModel::Hac {
                lags: broadcast(lags, order, "lags")?,
            },
            other => other.clone(),
        })
    }
}

/// Estimators on one panel, sharing factor fits and proxies between them.
pub struct Panel<'a> {
    pub y: &'a Tensor,
    pub xs: &'a [Tensor],
    settings: &'a PipelineSettings,
    fits: HashMap<(usize, usize), FactorFit>,
    proxies: Option<ProxySet>,
    ker: HashMap<u64, (KerFit, usize)>,
}

impl<'a> Panel<'a> {
    pub fn new(y: &'a Tensor, xs: &'a [Tensor], settings: &'a PipelineSettings) -> Result<Self> {
        check_regressors(y, xs)?;
        Ok(Panel {
            y,
            xs,
            settings,
            fits: HashMap::new(),
            proxies: None,
            ker: HashMap::new(),
        })
    }

    fn order(&self) -> usize {
        self.y.order()
    }

    fn factor_fit(&mut self, mode: usize, r: usize) -> Result<&FactorFit> {
        if !self.fits.contains_key(&(mode, r)) {
            let fit = interactive_fe_fit(self.y, self.xs, mode, r, self.settings.factor_options())?;
            self.fits.insert((mode, r), fit);
        }
        Ok(&self.fits[&(mode, r)])
    }

    /// Standardised loadings of one factor fit per mode.
    pub fn proxies(&mut self) -> Result<&ProxySet> {
        if self.proxies.is_none() {
            let ranks = self.settings.proxy_ranks(self.order())?;
            let mut fits = Vec::with_capacity(self.order());
            for (n, &r) in ranks.iter().enumerate() {
                fits.push(self.factor_fit(n, r)?.clone());
            }
            self.proxies = Some(ProxySet::from_factor_fits(self.order(), &fits)?);
        }
        Ok(self.proxies.as_ref().unwrap())
    }

    fn kernel(&self, h: f64) -> Result<KernelSpec> {
        match &self.settings.mode_bandwidths {
            Some(bw) => {
                if bw.len() != 1 && bw.len() != self.order() {
                    return Err(Error::InvalidArgument(format!(
                        "{} bandwidths for a panel of order {}",
                        bw.len(),
                        self.order()
                    )));
                }
                KernelSpec::new(self.settings.kernel, bw.clone())
            }
            None => KernelSpec::shared(self.settings.kernel, h),
        }
    }

    /// Plain kernel-weighted fit at bandwidth `h`, with its degenerate-row
    /// count.
    fn ker_fit(&mut self, h: f64) -> Result<(KerFit, usize)> {
        let key = h.to_bits();
        if !self.ker.contains_key(&key) {
            let spec = self.kernel(h)?;
            let modes: Vec<usize> = (0..self.order()).collect();
            let w = build_weights(self.proxies()?, &spec, &modes)?;
            let p = plain_projection(&w);
            let fit = ker_estimate(self.y, self.xs, &p)?;
            self.ker.insert(key, (fit, p.degenerate_rows));
        }
        Ok(self.ker[&key].clone())
    }

    fn report(
        &self,
        spec: &EstimatorSpec,
        beta: Vec<f64>,
        eta: &[Tensor],
        resid: &Tensor,
        mut method: MethodInfo,
        mut diagnostics: Diagnostics,
    ) -> Result<EstimateReport> {
        let model = self.settings.variance_for(self.order())?;
        let vcov = model.vcov(eta, resid)?;
        let n = resid.len() as f64;
        diagnostics.omega_condition = sym_condition(&(regressor_gram(eta) / n));
        diagnostics.sigma2 = resid.dot(resid) / n;
        method.estimator = spec.name().to_string();
        EstimateReport::new(
            beta,
            &vcov,
            self.settings.level,
            &model,
            method,
            diagnostics,
        )
    }

    /// Runs one estimator.
    pub fn estimate(&mut self, spec: &EstimatorSpec) -> Result<EstimateReport> {
        let order = self.order();
        match *spec {
            EstimatorSpec::Ols => {
                let fit = pooled_ols(self.y, self.xs)?;
                let resid = residualize(self.y, self.xs, &fit.beta);
                self.report(
                    spec,
                    fit.beta,
                    self.xs,
                    &resid,
                    MethodInfo::default(),
                    Diagnostics::default(),
                )
            }
            EstimatorSpec::Within => {
                let yt = standard_within(self.y);
                let xt: Vec<Tensor> = self.xs.iter().map(standard_within).collect();
                let fit = pooled_ols(&yt, &xt)?;
                let resid = residualize(&yt, &xt, &fit.beta);
                self.report(
                    spec,
                    fit.beta,
                    &xt,
                    &resid,
                    MethodInfo::default(),
                    Diagnostics::default(),
                )
            }
            EstimatorSpec::Factor { mode } => {
                if mode >= order {
                    return Err(Error::ModeOutOfRange { mode, order });
                }
                let r = self.settings.factor_rank;
                let fit = self.factor_fit(mode, r)?.clone();
                let eta = fit.projected_regressors(self.xs)?;
                let method = MethodInfo {
                    ranks: vec![r],
                    flatten_dim: Some(mode + 1),
                    ..MethodInfo::default()
                };
                let diag = Diagnostics {
                    iterations: Some(fit.iterations),
                    converged: Some(fit.converged),
                    ..Diagnostics::default()
                };
                self.report(spec, fit.beta.clone(), &eta, &fit.residual, method, diag)
            }
            EstimatorSpec::Ker { h } => {
                let (fit, degenerate) = self.ker_fit(h)?;
                let method = self.kernel_method(h)?;
                let diag = Diagnostics {
                    degenerate_rows: degenerate,
                    ..Diagnostics::default()
                };
                self.report(spec, fit.beta, &fit.x_tilde, &fit.residual, method, diag)
            }
            EstimatorSpec::KerOpt { h } => {
                let spec_k = self.kernel(h)?;
                let modes: Vec<usize> = (0..order).collect();
                let w = build_weights(self.proxies()?, &spec_k, &modes)?;
                let p = keropt_projection(&w);
                let fit = ker_estimate(self.y, self.xs, &p)?;
                let method = self.kernel_method(h)?;
                let diag = Diagnostics {
                    degenerate_rows: p.degenerate_rows,
                    ..Diagnostics::default()
                };
                self.report(spec, fit.beta, &fit.x_tilde, &fit.residual, method, diag)
            }
            EstimatorSpec::Ik { h } => {
                let spec_k = self.kernel(h)?;
                let ranks = self.settings.proxy_ranks(order)?;
                let distance = self.settings.distance;
                let p = iterative_projection(self.proxies()?, &ranks, &spec_k, distance)?;
                let fit = ker_estimate(self.y, self.xs, &p)?;
                let method = self.kernel_method(h)?;
                let diag = Diagnostics {
                    degenerate_rows: p.degenerate_rows,
                    ..Diagnostics::default()
                };
                self.report(spec, fit.beta, &fit.x_tilde, &fit.residual, method, diag)
            }
            EstimatorSpec::Ic { h } => {
                let gamma_ranks = self.settings.gamma_ranks(order)?;
                let a_ranks = self.settings.a_ranks(order)?;
                let (orth, degenerate) = if self.settings.split {
                    self.crossfit_orthogonalization(h, &gamma_ranks, &a_ranks)?
                } else {
                    let (ker, degenerate) = self.ker_fit(h)?;
                    let orth = Orthogonalization::estimate(
                        self.y,
                        self.xs,
                        &ker.beta,
                        &gamma_ranks,
                        &a_ranks,
                    )?;
                    (orth, degenerate)
                };
                let fit = ic_estimate(self.y, self.xs, &orth)?;
                let mut method = self.kernel_method(h)?;
                method.ranks = gamma_ranks.iter().chain(&a_ranks).copied().collect();
                let diag = Diagnostics {
                    degenerate_rows: degenerate,
                    ..Diagnostics::default()
                };
                self.report(spec, fit.beta, &fit.eta_hat, &fit.residual, method, diag)
            }
        }
    }

    fn kernel_method(&self, h: f64) -> Result<MethodInfo> {
        let spec = self.kernel(h)?;
        Ok(MethodInfo {
            bandwidths: (0..self.order())
                .map(|n| spec.bandwidth(n))
                .collect::<Result<_>>()?,
            ranks: self.settings.proxy_ranks(self.order())?,
            split: self.settings.split,
            ..MethodInfo::default()
        })
    }

    /// Preliminary slopes estimated separately on each half of the split
    /// mode, each fold with its own proxies.
    fn crossfit_orthogonalization(
        &self,
        h: f64,
        gamma_ranks: &[usize],
        a_ranks: &[usize],
    ) -> Result<(Orthogonalization, usize)> {
        let split = crossfit_split(
            self.y.shape(),
            self.settings.split_mode,
            self.settings.split_seed,
        )?;
        let mut betas = Vec::with_capacity(2);
        let mut degenerate = 0;
        for f in 0..2 {
            let yf = split.fold(self.y, f)?;
            let xf: Vec<Tensor> = self
                .xs
                .iter()
                .map(|x| split.fold(x, f))
                .collect::<Result<_>>()?;
            let mut sub = Panel::new(&yf, &xf, self.settings)?;
            let (fit, deg) = sub.ker_fit(h)?;
            betas.push(fit.beta);
            degenerate += deg;
        }
        let orth = crossfit_orthogonalization(
            self.y,
            self.xs,
            &split,
            [&betas[0], &betas[1]],
            gamma_ranks,
            a_ranks,
        )?;
        Ok((orth, degenerate))
    }
}

/// Runs every estimator in `specs` on one panel; failures are returned per
/// estimator.
pub fn run_estimators(
    y: &Tensor,
    xs: &[Tensor],
    specs: &[EstimatorSpec],
    settings: &PipelineSettings,
) -> Result<Vec<Result<EstimateReport>>> {
    let mut panel = Panel::new(y, xs, settings)?;
    Ok(specs.iter().map(|s| panel.estimate(s)).collect())
}
