use crate::error::{Error, Result};
use crate::linalg::leading_eigvecs;
use crate::tensor::svd::singular_values;
use crate::tensor::{flatten, mode_gram, mode_product, Matrix, Tensor};

/// Higher-order SVD truncated at a chosen multilinear rank: a core tensor and
/// one orthonormal factor matrix per mode.
#[derive(Clone, Debug)]
pub struct Hosvd {
    pub core: Tensor,
    /// `factors[n]` is `N_n × r_n` with orthonormal columns.
    pub factors: Vec<Matrix>,
}

impl Hosvd {
    /// `core ×_1 U⁽¹⁾ ×_2 … ×_d U⁽ᵈ⁾`.
    pub fn reconstruct(&self) -> Tensor {
        let mut out = self.core.clone();
        for (n, u) in self.factors.iter().enumerate() {
            out = mode_product(&out, u, n).expect("factor shapes match the core");
        }
        out
    }
}

/// Per-mode ranks of the flattenings together with their singular spectra.
#[derive(Clone, Debug)]
pub struct MultilinearRank {
    pub ranks: Vec<usize>,
    pub singular_spectra: Vec<Vec<f64>>,
}

fn max_rank(shape: &[usize], mode: usize) -> usize {
    let others: usize = shape
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode)
        .map(|(_, &n)| n)
        .product();
    shape[mode].min(others)
}

fn check_ranks(t: &Tensor, ranks: &[usize], allow_zero: bool) -> Result<()> {
    if ranks.len() != t.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} ranks supplied for a tensor of order {}",
            ranks.len(),
            t.order()
        )));
    }
    for (n, &r) in ranks.iter().enumerate() {
        let max = max_rank(t.shape(), n);
        if r > max || (r == 0 && !allow_zero) {
            return Err(Error::RankOutOfRange {
                rank: r,
                max,
                context: format!("for mode {n} of a tensor with shape {:?}", t.shape()),
            });
        }
    }
    Ok(())
}

/// Leading `rank` left singular vectors of the mode-`mode` flattening.
pub(crate) fn leading_mode_subspace(t: &Tensor, mode: usize, rank: usize) -> Result<Matrix> {
    let gram = mode_gram(t, mode)?;
    Ok(leading_eigvecs(&gram, rank).1)
}

/// Truncated HOSVD. Each factor holds the leading left singular vectors of
/// the corresponding flattening and the core is `t ×_n U⁽ⁿ⁾'` over all modes.
pub fn hosvd(t: &Tensor, ranks: &[usize]) -> Result<Hosvd> {
    check_ranks(t, ranks, false)?;
    let factors = ranks
        .iter()
        .enumerate()
        .map(|(n, &r)| leading_mode_subspace(t, n, r))
        .collect::<Result<Vec<_>>>()?;
    let mut core = t.clone();
    for (n, u) in factors.iter().enumerate() {
        core = mode_product(&core, &u.transpose(), n)?;
    }
    Ok(Hosvd { core, factors })
}

/// Low-multilinear-rank approximation `t ×_n U⁽ⁿ⁾U⁽ⁿ⁾'`, identical to
/// reconstructing [`hosvd`] at the same ranks. A zero rank in any mode
/// yields the zero tensor.
pub fn low_rank_approx(t: &Tensor, ranks: &[usize]) -> Result<Tensor> {
    check_ranks(t, ranks, true)?;
    if ranks.iter().any(|&r| r == 0) {
        return Tensor::zeros(t.shape());
    }
    let mut out = t.clone();
    for (n, &r) in ranks.iter().enumerate() {
        if r == t.shape()[n] {
            continue;
        }
        let u = leading_mode_subspace(t, n, r)?;
        out = mode_product(&out, &(&u * u.transpose()), n)?;
    }
    Ok(out)
}

/// Counts, per mode, the singular values of the flattening above
/// `rel_tol · σ₁`. The zero tensor has rank zero in every mode.
pub fn multilinear_rank(t: &Tensor, rel_tol: f64) -> Result<MultilinearRank> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    let mut ranks = Vec::with_capacity(t.order());
    let mut spectra = Vec::with_capacity(t.order());
    for n in 0..t.order() {
        let m = flatten(t, n)?;
        // singular values are invariant to transposition; take the cheap side
        let s = if m.nrows() <= m.ncols() {
            singular_values(&m)
        } else {
            singular_values(&m.transpose())
        };
        let top = s.first().copied().unwrap_or(0.0);
        let r = if top > 0.0 {
            s.iter().filter(|&&v| v > rel_tol * top).count()
        } else {
            0
        };
        ranks.push(r);
        spectra.push(s);
    }
    Ok(MultilinearRank {
        ranks,
        singular_spectra: spectra,
    })
}
