//! Simulation designs with interactive fixed effects and serially
//! correlated, heteroskedastic errors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cp_compose, mode_product, select_indices, Matrix, Tensor};

/// Which simulation design to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Low multilinear rank in every mode; the regressor loads on the fixed
    /// effects and on a lagged interactive term scaled by `rho`.
    Growing,
    /// Rank one in the leading `d − 2` modes and full rank elsewhere.
    Fixed,
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "growing" => Ok(Design::Growing),
            "fixed" => Ok(Design::Fixed),
            other => Err(Error::InvalidArgument(format!("unknown design '{other}'"))),
        }
    }
}

/// Arrays affected by the random relabelling of modes 0 and 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationScope {
    /// Relabel every array jointly, hiding the neighbour structure of the panel.
    #[default]
    Panel,
    /// Relabel the error tensor only, decoupling it from the regressor layout.
    Errors,
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub design: Design,
    pub dims: Vec<usize>,
    /// Weight on the lagged interactive term in the growing design.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Number of factors; defaults to 2 (growing) or `dims[0]` (fixed).
    #[serde(default)]
    pub factors: Option<usize>,
    #[serde(default = "default_true")]
    pub permute_cross_sections: bool,
    /// Which arrays the cross-section relabelling applies to.
    #[serde(default)]
    pub permutation_scope: PermutationScope,
    #[serde(default)]
    pub seed: u64,
}

fn default_rho() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl DgpConfig {
    pub fn growing(dim: usize, rho: f64) -> Self {
        DgpConfig {
            design: Design::Growing,
            dims: vec![dim; 3],
            rho,
            factors: None,
            permute_cross_sections: true,
            permutation_scope: PermutationScope::Panel,
            seed: 0,
        }
    }

    pub fn fixed(dims: Vec<usize>) -> Self {
        DgpConfig {
            design: Design::Fixed,
            dims,
            rho: 1.0,
            factors: None,
            permute_cross_sections: true,
            permutation_scope: PermutationScope::Panel,
            seed: 0,
        }
    }

    pub fn factor_count(&self) -> usize {
        self.factors.unwrap_or(match self.design {
            Design::Growing => 2,
            Design::Fixed => self.dims.first().copied().unwrap_or(1),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!(
                "dims must have at least two entries, each at least 2, got {:?}",
                self.dims
            )));
        }
        if self.design == Design::Fixed && self.dims.len() < 3 {
            return Err(Error::InvalidArgument(
                "the fixed design needs at least three dimensions".into(),
            ));
        }
        if !self.rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rho must be finite, got {}",
                self.rho
            )));
        }
        if self.factor_count() == 0 {
            return Err(Error::InvalidArgument(
                "at least one factor is required".into(),
            ));
        }
        Ok(())
    }
}

/// One simulated panel.
#[derive(Clone, Debug)]
pub struct DgpDraw {
    pub y: Tensor,
    pub x: Vec<Tensor>,
    pub a_true: Tensor,
    pub eps: Tensor,
    pub beta_true: f64,
    pub seed: u64,
    pub config: DgpConfig,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Rows `1..` of a factor matrix whose row 0 is the presample slot.
fn current(m: &Matrix) -> Matrix {
    m.rows(1, m.nrows() - 1).into_owned()
}

/// `m_i + m_{i−1}` for the current rows.
fn lag_sum(m: &Matrix) -> Matrix {
    let n = m.nrows() - 1;
    m.rows(1, n) + m.rows(0, n)
}

/// `B` with `(B v)_i = v_i + v_{i+1}`, mapping a padded mode back to size `n`.
fn pair_sum(n: usize) -> Matrix {
    let mut b = Matrix::zeros(n, n + 1);
    for i in 0..n {
        b[(i, i)] = 1.0;
        b[(i, i + 1)] = 1.0;
    }
    b
}

/// Draws `η` on the padded grid and the error with `ν ~ N(0, min{4, η²})`
/// summed over every combination of current and one-step lagged indices,
/// scaled by `1/√2`. Returns the current-grid `η` and `ε`.
fn draw_errors(dims: &[usize], rng: &mut ChaCha20Rng) -> Result<(Tensor, Tensor)> {
    let padded: Vec<usize> = dims.iter().map(|n| n + 1).collect();
    let eta_pad = Tensor::from_fn(&padded, |_| rng.sample(StandardNormal))?;
    let nu_data: Vec<f64> = eta_pad
        .data()
        .iter()
        .map(|&e| {
            let z: f64 = rng.sample(StandardNormal);
            z * e.abs().min(2.0)
        })
        .collect();
    let mut eps = Tensor::new(padded.clone(), nu_data)?;
    for (n, &size) in dims.iter().enumerate() {
        eps = mode_product(&eps, &pair_sum(size), n)?;
    }
    eps = eps.scale(std::f64::consts::FRAC_1_SQRT_2);
    let mut eta = eta_pad;
    for (n, &size) in dims.iter().enumerate() {
        let idx: Vec<usize> = (1..=size).collect();
        eta = select_indices(&eta, n, &idx)?;
    }
    Ok((eta, eps))
}

fn draw_permutations(dims: &[usize], rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    (0..2.min(dims.len()))
        .map(|n| {
            let mut perm: Vec<usize> = (0..dims[n]).collect();
            perm.shuffle(rng);
            perm
        })
        .collect()
}

fn permute(t: &Tensor, perms: &[Vec<usize>]) -> Result<Tensor> {
    let mut out = t.clone();
    for (n, perm) in perms.iter().enumerate() {
        out = select_indices(&out, n, perm)?;
    }
    Ok(out)
}

/// Composes `Y = X + 𝒜 + ε` after applying the configured relabelling.
fn assemble(
    config: &DgpConfig,
    seed: u64,
    a: Tensor,
    x: Tensor,
    eps: Tensor,
    rng: &mut ChaCha20Rng,
) -> Result<DgpDraw> {
    let (a, x, eps) = if config.permute_cross_sections {
        let perms = draw_permutations(&config.dims, rng);
        match config.permutation_scope {
            PermutationScope::Panel => (
                permute(&a, &perms)?,
                permute(&x, &perms)?,
                permute(&eps, &perms)?,
            ),
            PermutationScope::Errors => (a, x, permute(&eps, &perms)?),
        }
    } else {
        (a, x, eps)
    };
    let y = x.add(&a)?.add(&eps)?;
    Ok(DgpDraw {
        y,
        x: vec![x],
        a_true: a,
        eps,
        beta_true: 1.0,
        seed,
        config: config.clone(),
    })
}

fn sample_variance(t: &Tensor) -> f64 {
    let n = t.len() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn unit_variance(t: &Tensor) -> Tensor {
    t.scale(1.0 / sample_variance(t).sqrt())
}

/// Growing-sample design: `Y = X + 𝒜 + ε` with
/// `X = 2𝒜 − ρ Σ_ℓ ∘_n (φ⁽ⁿ⁾_{i,ℓ} + φ⁽ⁿ⁾_{i−1,ℓ}) + η`.
pub fn gen_dgp_growing(config: &DgpConfig, seed: u64) -> Result<DgpDraw> {
    config.validate()?;
    if config.design != Design::Growing {
        return Err(Error::InvalidArgument(
            "configuration is not the growing design".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let l = config.factor_count();
    let padded: Vec<Matrix> = config
        .dims
        .iter()
        .map(|&n| normal_matrix(n + 1, l, &mut rng))
        .collect();
    let a = cp_compose(&padded.iter().map(current).collect::<Vec<_>>())?;
    let lagged = cp_compose(&padded.iter().map(lag_sum).collect::<Vec<_>>())?;
    let (eta, eps) = draw_errors(&config.dims, &mut rng)?;
    let x = a.scale(2.0).add_scaled(&lagged, -config.rho)?.add(&eta)?;
    assemble(config, seed, a, x, eps, &mut rng)
}

/// Fixed-sample design: loadings in the leading `d − 2` modes are rank one
/// (`φ_{iℓ} = a_i b_ℓ`), the rest are full rank. `𝒜` and the lagged
/// interactive term in `X` are both rescaled to unit sample variance.
pub fn gen_dgp_fixed(config: &DgpConfig, seed: u64) -> Result<DgpDraw> {
    config.validate()?;
    if config.design != Design::Fixed {
        return Err(Error::InvalidArgument(
            "configuration is not the fixed design".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let l = config.factor_count();
    let d = config.dims.len();
    let padded: Vec<Matrix> = config
        .dims
        .iter()
        .enumerate()
        .map(|(n, &size)| {
            if n < d - 2 {
                let a = normal_matrix(size + 1, 1, &mut rng);
                let b = normal_matrix(1, l, &mut rng);
                a * b
            } else {
                normal_matrix(size + 1, l, &mut rng)
            }
        })
        .collect();
    let a = unit_variance(&cp_compose(
        &padded.iter().map(current).collect::<Vec<_>>(),
    )?);
    let lagged = unit_variance(&cp_compose(
        &padded.iter().map(lag_sum).collect::<Vec<_>>(),
    )?);
    let (eta, eps) = draw_errors(&config.dims, &mut rng)?;
    let x = a.add(&lagged)?.add(&eta)?;
    assemble(config, seed, a, x, eps, &mut rng)
}

/// Draws from whichever design `config` names.
pub fn generate(config: &DgpConfig, seed: u64) -> Result<DgpDraw> {
    match config.design {
        Design::Growing => gen_dgp_growing(config, seed),
        Design::Fixed => gen_dgp_fixed(config, seed),
    }
}
