//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DVector, SymmetricEigen};

use crate::tensor::Matrix;

/// Normal equations whose condition number exceeds this are solved with a
/// pseudo-inverse instead of a Cholesky factorisation.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (eigenvectors permuted to match).
pub fn sym_eigen_desc(m: &Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Leading `k` eigenvectors of a symmetric positive semidefinite matrix.
pub fn leading_eigvecs(m: &Matrix, k: usize) -> (Vec<f64>, Matrix) {
    let (values, vectors) = sym_eigen_desc(m);
    (values, vectors.columns(0, k).into_owned())
}

/// 2-norm condition number of a symmetric PSD matrix (∞ when singular).
pub fn sym_condition(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let (values, _) = sym_eigen_desc(m);
    let max = values[0];
    let min = *values.last().unwrap();
    if max <= 0.0 {
        return f64::INFINITY;
    }
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Moore–Penrose inverse of a symmetric matrix; eigenvalues below
/// `rel_tol · λ_max` in magnitude are treated as zero.
pub fn sym_pinv(m: &Matrix, rel_tol: f64) -> Matrix {
    let (values, vectors) = sym_eigen_desc(m);
    let n = m.nrows();
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut out = Matrix::zeros(n, n);
    if scale == 0.0 {
        return out;
    }
    for (i, &v) in values.iter().enumerate() {
        if v.abs() > rel_tol * scale {
            let u = vectors.column(i);
            out += (u * u.transpose()) / v;
        }
    }
    out
}

/// Result of solving `G b = r` for a symmetric PSD Gram matrix `G`.
#[derive(Clone, Debug)]
pub struct NormalSolution {
    pub coef: DVector<f64>,
    pub condition: f64,
    /// True when the pseudo-inverse fallback was used.
    pub ill_conditioned: bool,
}

/// Solves normal equations, falling back to a pseudo-inverse when the Gram
/// matrix is numerically singular or its condition number exceeds
/// [`ILL_CONDITIONED`].
pub fn solve_normal(gram: &Matrix, rhs: &DVector<f64>) -> NormalSolution {
    let condition = sym_condition(gram);
    if condition.is_finite() && condition <= ILL_CONDITIONED {
        if let Some(chol) = gram.clone().cholesky() {
            return NormalSolution {
                coef: chol.solve(rhs),
                condition,
                ill_conditioned: false,
            };
        }
    }
    NormalSolution {
        coef: sym_pinv(gram, 1.0 / ILL_CONDITIONED) * rhs,
        condition,
        ill_conditioned: true,
    }
}

/// Symmetrises `m` and clips negative eigenvalues at zero.
pub fn psd_project(m: &Matrix) -> Matrix {
    let sym = (m + m.transpose()) * 0.5;
    let (values, vectors) = sym_eigen_desc(&sym);
    if values.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let n = m.nrows();
    let mut out = Matrix::zeros(n, n);
    for (i, &v) in values.iter().enumerate() {
        if v > 0.0 {
            let u = vectors.column(i);
            out += (u * u.transpose()) * v;
        }
    }
    (&out + out.transpose()) * 0.5
}
