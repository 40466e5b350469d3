//! Flattening, mode products and low-rank approximation of a small tensor.
//!
//! Run with `cargo run --example tensor_algebra`.

use mdife::tensor::{
    cp_compose, flatten, hosvd, mode_product, multilinear_rank, truncated_svd, unflatten,
};
use mdife::{Matrix, Result, Tensor};

fn main() -> Result<()> {
    let t = Tensor::from_fn(&[2, 3, 4], |i| (i[0] + 10 * i[1] + 100 * i[2]) as f64)?;
    let m = flatten(&t, 1)?;
    println!(
        "mode-2 flattening of a 2x3x4 tensor is {}x{}:\n{m}",
        m.nrows(),
        m.ncols()
    );
    assert_eq!(unflatten(&m, 1, t.shape())?, t);

    // scaling mode 1 by a diagonal matrix scales the matching slices
    let d = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0, -1.0]));
    let scaled = mode_product(&t, &d, 1)?;
    println!(
        "t[0,2,3] = {}, after scaling = {}",
        t.get(&[0, 2, 3]),
        scaled.get(&[0, 2, 3])
    );

    // an outer product is rank one in every mode
    let phi = vec![
        Matrix::from_column_slice(2, 1, &[1.0, 2.0]),
        Matrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]),
        Matrix::from_column_slice(2, 1, &[1.0, 1.0]),
    ];
    let rank_one = cp_compose(&phi)?;
    println!(
        "entry (1,2,0) of the outer product: {}",
        rank_one.get(&[1, 2, 0])
    );
    println!(
        "multilinear rank: {:?}",
        multilinear_rank(&rank_one, 1e-10)?.ranks
    );

    let noisy = t.add(&Tensor::from_fn(t.shape(), |i| {
        0.01 * ((i[0] * 7 + i[1] * 3 + i[2]) % 5) as f64
    })?)?;
    let h = hosvd(&noisy, &[1, 2, 2])?;
    let err = noisy.sub(&h.reconstruct())?.frobenius_norm() / noisy.frobenius_norm();
    println!("relative HOSVD error at ranks (1,2,2): {err:.2e}");

    let svd = truncated_svd(&flatten(&noisy, 2)?, 1)?;
    println!(
        "leading singular value of the mode-3 flattening: {:.3}",
        svd.s[0]
    );
    Ok(())
}
