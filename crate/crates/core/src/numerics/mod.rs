//! Shared numerical kernels: symmetric matrices and their spectra,
//! finite-difference oracles, and reproducible Gaussian streams.

mod diff;
mod linalg;
mod rng;

pub use diff::{finite_diff_gradient, finite_diff_hessian};
pub use linalg::{
    pseudo_inverse, sym_eigendecomposition, SymEigen, SymMatrix, DEFAULT_RANK_TOL,
};
pub use rng::{gaussian_stream, RandomStream, STREAM_ALGORITHM};

/// Parameter and phase-space vectors.
pub type RealVector = nalgebra::DVector<f64>;

/// Fails with [`crate::Error::Evaluation`] on the first non-finite entry.
pub fn ensure_finite(v: &[f64]) -> crate::Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(crate::Error::Evaluation { index }),
        None => Ok(()),
    }
}
