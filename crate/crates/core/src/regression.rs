//! Pooled least squares on vectorised tensors.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{solve_normal, NormalSolution};
use crate::tensor::{Matrix, Tensor};

/// Checks that `xs` is non-empty and every regressor matches `y`'s shape.
pub(crate) fn check_regressors(y: &Tensor, xs: &[Tensor]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one regressor is required".into(),
        ));
    }
    for (k, x) in xs.iter().enumerate() {
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch(format!(
                "regressor {k} has shape {:?}, outcome has {:?}",
                x.shape(),
                y.shape()
            )));
        }
    }
    Ok(())
}

/// `vec_K(X)' vec_K(X)`.
pub fn regressor_gram(xs: &[Tensor]) -> Matrix {
    let k = xs.len();
    let mut g = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let v = xs[a].dot(&xs[b]);
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// `vec_K(X)' vec(y)`.
pub fn regressor_cross(xs: &[Tensor], y: &Tensor) -> DVector<f64> {
    DVector::from_iterator(xs.len(), xs.iter().map(|x| x.dot(y)))
}

/// `Σ_k X_k β_k`.
pub fn linear_combination(xs: &[Tensor], beta: &[f64]) -> Tensor {
    let mut out = xs[0].scale(beta[0]);
    for (x, &b) in xs.iter().zip(beta).skip(1) {
        out = out.add_scaled(x, b).expect("regressors share a shape");
    }
    out
}

/// `y − Σ_k X_k β_k`.
pub fn residualize(y: &Tensor, xs: &[Tensor], beta: &[f64]) -> Tensor {
    let mut out = y.clone();
    for (x, &b) in xs.iter().zip(beta) {
        out = out.add_scaled(x, -b).expect("regressors share a shape");
    }
    out
}

/// Pooled OLS fit.
#[derive(Clone, Debug)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub gram: Matrix,
    pub condition: f64,
    pub ill_conditioned: bool,
}

/// Pooled OLS of `vec(y)` on the vectorised regressors.
///
/// Exactly singular regressor Gram matrices are an error; merely
/// ill-conditioned ones are solved by pseudo-inverse and flagged.
pub fn pooled_ols(y: &Tensor, xs: &[Tensor]) -> Result<OlsFit> {
    check_regressors(y, xs)?;
    let gram = regressor_gram(xs);
    if gram.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateRegressors(
            "all regressors are identically zero".into(),
        ));
    }
    let rhs = regressor_cross(xs, y);
    let NormalSolution {
        coef,
        condition,
        ill_conditioned,
    } = solve_normal(&gram, &rhs);
    if !condition.is_finite() {
        return Err(Error::DegenerateRegressors(
            "regressor Gram matrix is singular".into(),
        ));
    }
    Ok(OlsFit {
        beta: coef.iter().copied().collect(),
        gram,
        condition,
        ill_conditioned,
    })
}
