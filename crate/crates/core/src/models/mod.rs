//! Testbed losses with analytic derivatives and label-noise structure.
//!
//! Every model is a mean-squared-error fit of some parametric function to a
//! fixed set of scalar labels. Label noise perturbs those labels, so the
//! per-step gradient noise is `-ε σ(w) ξ` for a model-specific noise function
//! `σ`, and on the zero-loss manifold `σσᵀ = c ∇²L` with `c = noise_scale()`.

mod dataset;
mod mlp;
mod noise;
mod quadratic;
mod sensing;
mod uv;

pub use dataset::{
    generate_classification, generate_sensing, generate_uv, ClassificationData,
    ClassificationSpec, SensingData, SensingSpec, UvData, UvSpec,
};
pub use mlp::{Activation, MlpModel};
pub use noise::{noisy_labels, NoiseKind, NoiseMap};
pub use quadratic::QuadraticModel;
pub use sensing::MatrixSensingModel;
pub use uv::VectorUvModel;

use nalgebra::{DMatrix, DVector};

use crate::numerics::{finite_diff_hessian, sym_eigendecomposition, SymMatrix};
use crate::{Error, Result};

/// A twice-differentiable training loss over a flat parameter vector.
pub trait Model: Send + Sync {
    /// Parameter count `D`.
    fn dim(&self) -> usize;

    /// Clean training labels, flattened.
    fn labels(&self) -> &[f64];

    fn loss_with_labels(&self, w: &[f64], labels: &[f64]) -> f64;

    /// Writes the gradient of the loss against `labels` into `out`.
    fn gradient_with_labels(&self, w: &[f64], labels: &[f64], out: &mut [f64]);

    /// Closed-form `Tr ∇²L`, exact on the zero-loss manifold.
    fn trace_hessian(&self, w: &DVector<f64>) -> Result<f64>;

    /// `σ(w)` with `∇L(labels + εξ) = ∇L(labels) - ε σ ξ`; shape `D × labels().len()`.
    fn noise_function(&self, w: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// `c` in `σσᵀ = c ∇²L` on the zero-loss manifold.
    fn noise_scale(&self) -> f64;

    /// Dimension `M` of the zero-loss manifold at generic points, when known.
    fn manifold_dim(&self) -> Option<usize> {
        None
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::contract(format!(
                "parameter vector has length {}, model expects {}",
                w.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn loss(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w.as_slice())?;
        Ok(self.loss_with_labels(w.as_slice(), self.labels()))
    }

    fn gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(w.as_slice())?;
        let mut g = DVector::zeros(self.dim());
        self.gradient_with_labels(w.as_slice(), self.labels(), g.as_mut_slice());
        Ok(g)
    }

    /// Exact Hessian where the model provides one; central differences of the
    /// analytic gradient otherwise.
    fn hessian(&self, w: &DVector<f64>) -> Result<SymMatrix> {
        self.check_dim(w.as_slice())?;
        let h = 1e-5 * (1.0 + w.norm());
        finite_diff_hessian(|p| self.gradient(p).expect("dimension checked"), w, h)
    }

    /// `∂²(∇L)[S] = Σ_ij S_ij ∂_i ∂_j ∇L`.
    ///
    /// Default: expand `S = Σ s_k q_k q_kᵀ` and take second central
    /// differences of the gradient along each `q_k` with
    /// `h = 1e-3 (1 + ‖w‖)`.
    fn third_derivative_contract(&self, w: &DVector<f64>, s: &SymMatrix) -> Result<DVector<f64>> {
        self.check_dim(w.as_slice())?;
        if s.dim() != self.dim() {
            return Err(Error::contract("contraction matrix has the wrong size"));
        }
        let eig = sym_eigendecomposition(s)?;
        let h = 1e-3 * (1.0 + w.norm());
        let g0 = self.gradient(w)?;
        let cut = 1e-14 * eig.eigenvalues.amax();
        let mut out = DVector::zeros(self.dim());
        for (k, &sk) in eig.eigenvalues.iter().enumerate() {
            if sk.abs() <= cut {
                continue;
            }
            let q = eig.eigenvectors.column(k);
            let gp = self.gradient(&(w + q * h))?;
            let gm = self.gradient(&(w - q * h))?;
            out += (gp - &g0 * 2.0 + gm) * (sk / (h * h));
        }
        crate::numerics::ensure_finite(out.as_slice()).map_err(|_| Error::NumericalFailure {
            reason: "third-derivative contraction is not finite".into(),
            iterations: 0,
        })?;
        Ok(out)
    }

    /// `∇ Tr ∇²L`; default is central differences of [`Model::trace_hessian`].
    fn trace_hessian_gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let h = 1e-5 * (1.0 + w.norm());
        crate::numerics::finite_diff_gradient(
            |p| self.trace_hessian(p).unwrap_or(f64::NAN),
            w,
            h,
        )
    }
}

/// `‖w‖²`.
pub(crate) fn norm_sq(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum()
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    pub fn fd_gradient_rel_err(model: &dyn Model, w: &DVector<f64>) -> f64 {
        let g = model.gradient(w).unwrap();
        let fd = crate::numerics::finite_diff_gradient(|p| model.loss(p).unwrap(), w, 1e-4).unwrap();
        (&g - &fd).norm() / g.norm().max(1e-300)
    }
}
