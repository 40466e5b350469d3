//! Slope estimation for multi-dimensional panels with interactive fixed effects.
//!
//! The crate is organised around a dense [`tensor::Tensor`] type. On top of
//! it sit the flattened factor estimator ([`factor`]), kernel-weighted
//! within transformations ([`kwfe`]), the inference-corrected estimator with
//! its variance models ([`inference`]) and a Monte Carlo and CSV harness
//! ([`harness`]).

pub mod error;
pub mod factor;
pub mod harness;
pub mod inference;
pub mod kwfe;
pub mod linalg;
pub mod regression;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Tensor};
