//! Dense d-order tensors and the multilinear algebra the estimators are built on.
//!
//! Storage is column-major in the tensor sense: the first index varies
//! fastest. All mode indices in this module are zero-based, so mode `0` is
//! the first dimension of the panel.
//!
//! The factor-`n` flattening puts mode `n` on the rows and the remaining
//! modes on the columns in the cyclic order `n+1, …, d-1, 0, …, n-1`, with the
//! first listed mode varying fastest. All estimators in the crate are
//! invariant to the column order; it is fixed here so that flattenings are
//! reproducible.

mod hosvd;
mod svd;

pub use hosvd::{hosvd, low_rank_approx, multilinear_rank, Hosvd, MultilinearRank};
pub use svd::{truncated_svd, SvdResult};

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::error::{Error, Result};

/// Dense real matrix used for flattenings, weights and factor loadings.
pub type Matrix = DMatrix<f64>;

/// A dense real tensor of order at least two.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from its shape and data, first index fastest.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {:?} holds {} entries but {} were supplied",
                shape,
                len,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor entry {pos} is {}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        validate_shape(shape)?;
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            increment_index(&mut idx, shape);
        }
        Self::new(shape.to_vec(), data)
    }

    /// Internal constructor for data produced by arithmetic on valid tensors.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Entries in linear order, first index fastest.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            debug_assert!(i < n);
            lin += i * stride;
            stride *= n;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Entrywise inner product.
    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| v * c).collect(),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Tensor, c: f64) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + c * b)
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Sizes of the blocks before, at and after `mode` in linear order.
    pub(crate) fn mode_split(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.shape[..mode].iter().product();
        let right = self.shape[mode + 1..].iter().product();
        (left, self.shape[mode], right)
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.len() < 2 {
        return Err(Error::InvalidTensor(format!(
            "order must be at least 2, got shape {shape:?}"
        )));
    }
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidTensor(format!(
            "all dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

/// Advances a multi-index in linear order (first index fastest).
pub(crate) fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

/// Factor-`mode` flattening.
pub fn flatten(t: &Tensor, mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    let (left, n, right) = t.mode_split(mode);
    let mut m = Matrix::zeros(n, left * right);
    // column index over (mode+1..d, 0..mode) is r + right * l
    for r in 0..right {
        for i in 0..n {
            let base = left * (i + n * r);
            for l in 0..left {
                m[(i, r + right * l)] = t.data[base + l];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`flatten`].
pub fn unflatten(m: &Matrix, mode: usize, shape: &[usize]) -> Result<Tensor> {
    validate_shape(shape)?;
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    let left: usize = shape[..mode].iter().product();
    let right: usize = shape[mode + 1..].iter().product();
    let n = shape[mode];
    if m.nrows() != n || m.ncols() != left * right {
        return Err(Error::ShapeMismatch(format!(
            "a {}x{} matrix cannot be unflattened along mode {mode} into {shape:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = vec![0.0; n * left * right];
    for r in 0..right {
        for i in 0..n {
            let base = left * (i + n * r);
            for l in 0..left {
                data[base + l] = m[(i, r + right * l)];
            }
        }
    }
    Tensor::new(shape.to_vec(), data)
}

/// The `mode`-product `t ×_mode b`: every mode fibre is multiplied by `b`.
///
/// `b` must have as many columns as `t` has entries along `mode`; the
/// result has `b.nrows()` entries along that mode.
pub fn mode_product(t: &Tensor, b: &Matrix, mode: usize) -> Result<Tensor> {
    t.check_mode(mode)?;
    let (left, n, right) = t.mode_split(mode);
    if b.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "mode-{mode} product needs a matrix with {n} columns, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let j = b.nrows();
    let mut shape = t.shape.clone();
    shape[mode] = j;
    let mut out = vec![0.0; left * j * right];
    if left == 1 {
        let src = DMatrixView::from_slice(&t.data, n, right);
        let mut dst = DMatrixViewMut::from_slice(&mut out, j, right);
        dst.gemm(1.0, b, &src, 0.0);
    } else {
        let bt = b.transpose();
        for r in 0..right {
            let src = DMatrixView::from_slice(&t.data[r * left * n..(r + 1) * left * n], left, n);
            let mut dst =
                DMatrixViewMut::from_slice(&mut out[r * left * j..(r + 1) * left * j], left, j);
            dst.gemm(1.0, &src, &bt, 0.0);
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

/// Applies `matrices[n]` along every mode `n` for which one is given.
pub fn multi_mode_product(t: &Tensor, matrices: &[Option<&Matrix>]) -> Result<Tensor> {
    if matrices.len() != t.order() {
        return Err(Error::ShapeMismatch(format!(
            "{} matrices supplied for a tensor of order {}",
            matrices.len(),
            t.order()
        )));
    }
    let mut out = t.clone();
    for (mode, m) in matrices.iter().enumerate() {
        if let Some(m) = m {
            out = mode_product(&out, m, mode)?;
        }
    }
    Ok(out)
}

/// Gram matrix `A_(n) B_(n)'` of two equally shaped tensors, computed without
/// materialising the flattenings.
pub fn mode_cross_gram(a: &Tensor, b: &Tensor, mode: usize) -> Result<Matrix> {
    a.check_mode(mode)?;
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let (left, n, right) = a.mode_split(mode);
    let mut g = Matrix::zeros(n, n);
    if left == 1 {
        let sa = DMatrixView::from_slice(&a.data, n, right);
        let sb = DMatrixView::from_slice(&b.data, n, right);
        g.gemm(1.0, &sa, &sb.transpose(), 0.0);
    } else {
        for r in 0..right {
            let range = r * left * n..(r + 1) * left * n;
            let sa = DMatrixView::from_slice(&a.data[range.clone()], left, n);
            let sb = DMatrixView::from_slice(&b.data[range], left, n);
            g.gemm_tr(1.0, &sa, &sb, 1.0);
        }
    }
    Ok(g)
}

/// `T_(n) T_(n)'`.
pub fn mode_gram(t: &Tensor, mode: usize) -> Result<Matrix> {
    let mut g = mode_cross_gram(t, t, mode)?;
    // exact symmetry for the eigen solvers
    let n = g.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Sum of rank-one outer products `Σ_ℓ φ⁽¹⁾_ℓ ∘ … ∘ φ⁽ᵈ⁾_ℓ`; column `ℓ` of
/// `factors[n]` holds `φ⁽ⁿ⁾_ℓ`.
pub fn cp_compose(factors: &[Matrix]) -> Result<Tensor> {
    if factors.len() < 2 {
        return Err(Error::InvalidTensor(format!(
            "need at least two factor matrices, got {}",
            factors.len()
        )));
    }
    let l = factors[0].ncols();
    if l == 0 {
        return Err(Error::InvalidArgument(
            "factor matrices have no columns".into(),
        ));
    }
    if let Some(bad) = factors.iter().find(|f| f.ncols() != l) {
        return Err(Error::ShapeMismatch(format!(
            "factor matrices must share a column count: {} vs {}",
            l,
            bad.ncols()
        )));
    }
    let shape: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    validate_shape(&shape)?;
    let len: usize = shape.iter().product();
    let mut data = vec![0.0; len];
    let mut block = Vec::with_capacity(len);
    for col in 0..l {
        // outer product built mode by mode
        block.clear();
        block.extend(factors[0].column(col).iter().copied());
        for f in &factors[1..] {
            let prev = block.len();
            let mut next = Vec::with_capacity(prev * f.nrows());
            for &v in f.column(col).iter() {
                next.extend(block.iter().map(|b| b * v));
            }
            block = next;
        }
        for (d, b) in data.iter_mut().zip(&block) {
            *d += b;
        }
    }
    Tensor::new(shape, data)
}

/// The sub-tensor holding indices `idx` (in that order) along `mode`.
pub fn select_indices(t: &Tensor, mode: usize, idx: &[usize]) -> Result<Tensor> {
    t.check_mode(mode)?;
    let (left, n, right) = t.mode_split(mode);
    if idx.is_empty() {
        return Err(Error::InvalidArgument("no indices selected".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!(
            "index {bad} out of range for mode {mode} of size {n}"
        )));
    }
    let m = idx.len();
    let mut out = Vec::with_capacity(left * m * right);
    for r in 0..right {
        for &i in idx {
            let base = left * (i + n * r);
            out.extend_from_slice(&t.data[base..base + left]);
        }
    }
    let mut shape = t.shape.clone();
    shape[mode] = m;
    Ok(Tensor::from_parts(shape, out))
}

/// Inverse of [`select_indices`] over a partition: writes each part back at
/// its indices along `mode` of a tensor with shape `shape`.
pub fn scatter_indices(
    parts: &[(&[usize], &Tensor)],
    mode: usize,
    shape: &[usize],
) -> Result<Tensor> {
    let mut out = Tensor::zeros(shape)?;
    out.check_mode(mode)?;
    let (left, n, right) = out.mode_split(mode);
    let mut seen = vec![false; n];
    for (idx, part) in parts {
        let mut expect = shape.to_vec();
        expect[mode] = idx.len();
        if part.shape != expect {
            return Err(Error::ShapeMismatch(format!(
                "part of shape {:?} does not match {expect:?}",
                part.shape
            )));
        }
        for (pos, &i) in idx.iter().enumerate() {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
            for r in 0..right {
                let src = left * (pos + idx.len() * r);
                let dst = left * (i + n * r);
                out.data[dst..dst + left].copy_from_slice(&part.data[src..src + left]);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument(format!(
            "the parts do not cover every index of mode {mode}"
        )));
    }
    Ok(out)
}
