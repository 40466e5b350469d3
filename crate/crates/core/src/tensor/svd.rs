use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Leading singular triplets of a matrix.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Left singular vectors, one per column.
    pub u: Matrix,
    /// Singular values in nonincreasing order.
    pub s: Vec<f64>,
    /// Right singular vectors, one per column.
    pub v: Matrix,
}

impl SvdResult {
    /// `Σ_r σ_r u_r v_r'` over the retained triplets.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.transpose()
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }
}

/// Rank-`k` truncated SVD. By Eckart–Young the reconstruction of the result
/// is a best rank-`k` approximation in Frobenius norm.
pub fn truncated_svd(m: &Matrix, k: usize) -> Result<SvdResult> {
    let max = m.nrows().min(m.ncols());
    if k == 0 || k > max {
        return Err(Error::RankOutOfRange {
            rank: k,
            max,
            context: format!("for a {}x{} matrix", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to truncated_svd".into()));
    }
    let svd = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::Singular(format!("SVD did not converge: {e:?}")))?;
    let (u, v, sv) = (svd.U(), svd.V(), svd.S().column_vector());
    Ok(SvdResult {
        u: Matrix::from_fn(m.nrows(), k, |i, j| u[(i, j)]),
        s: (0..k).map(|j| sv[j]).collect(),
        v: Matrix::from_fn(m.ncols(), k, |i, j| v[(i, j)]),
    })
}

fn to_faer(m: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// All singular values of `m`, nonincreasing.
pub(crate) fn singular_values(m: &Matrix) -> Vec<f64> {
    match to_faer(m).singular_values() {
        Ok(s) => s,
        Err(_) => {
            let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        }
    }
}
