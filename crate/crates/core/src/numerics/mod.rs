//! Dense matrices, activations and random streams.

mod activation;
mod matrix;
mod rng;

pub use activation::{activation, sigmoid, softmax_rows, softmax_rows_vjp, ActivationKind};
pub(crate) use activation::softmax_in_place;
pub use matrix::Matrix;
pub(crate) use rng::hash3;
pub use rng::RngStream;

/// Standalone product, mirroring [`Matrix::matmul`].
pub fn matmul(a: &Matrix, b: &Matrix) -> crate::Result<Matrix> {
    a.matmul(b)
}
