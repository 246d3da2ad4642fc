use nalgebra::{DMatrix, DVector};

use super::Model;
use crate::numerics::SymMatrix;
use crate::{Error, Result};

/// Least squares `L = (1/2P) ‖X w - y‖²` with a fixed design `X` (`P × D`).
///
/// The Hessian `XᵀX / P` is constant; with `P < D` the zero-loss set is an
/// affine subspace of dimension `D - rank X`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    design: DMatrix<f64>,
    labels: Vec<f64>,
    hessian: SymMatrix,
}

impl QuadraticModel {
    pub fn new(design: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        if design.nrows() != labels.len() || design.nrows() == 0 {
            return Err(Error::contract("design rows must match labels"));
        }
        let p = design.nrows() as f64;
        let hessian = SymMatrix::symmetrize(design.transpose() * &design / p);
        Ok(Self {
            design,
            labels,
            hessian,
        })
    }

    /// `½ λ ‖w‖²` in `d` dimensions.
    pub fn isotropic(d: usize, lambda: f64) -> Self {
        let design = DMatrix::identity(d, d) * (lambda * d as f64).sqrt();
        Self::new(design, vec![0.0; d]).expect("square design")
    }

    /// `½ Σ λ_i w_i²`.
    pub fn diagonal(lambdas: &[f64]) -> Self {
        let d = lambdas.len();
        let diag = DVector::from_iterator(d, lambdas.iter().map(|l| (l * d as f64).sqrt()));
        Self::new(DMatrix::from_diagonal(&diag), vec![0.0; d]).expect("square design")
    }

    pub fn constant_hessian(&self) -> &SymMatrix {
        &self.hessian
    }

    fn residuals(&self, w: &[f64], labels: &[f64]) -> DVector<f64> {
        let w = DVector::from_column_slice(w);
        &self.design * w - DVector::from_column_slice(labels)
    }
}

impl Model for QuadraticModel {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn loss_with_labels(&self, w: &[f64], labels: &[f64]) -> f64 {
        self.residuals(w, labels).norm_squared() / (2.0 * self.labels.len() as f64)
    }

    fn gradient_with_labels(&self, w: &[f64], labels: &[f64], out: &mut [f64]) {
        let g = self.design.transpose() * self.residuals(w, labels) / self.labels.len() as f64;
        out.copy_from_slice(g.as_slice());
    }

    fn hessian(&self, w: &DVector<f64>) -> Result<SymMatrix> {
        self.check_dim(w.as_slice())?;
        Ok(self.hessian.clone())
    }

    fn third_derivative_contract(&self, w: &DVector<f64>, s: &SymMatrix) -> Result<DVector<f64>> {
        self.check_dim(w.as_slice())?;
        if s.dim() != self.dim() {
            return Err(Error::contract("contraction matrix has the wrong size"));
        }
        Ok(DVector::zeros(self.dim()))
    }

    fn trace_hessian(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w.as_slice())?;
        Ok(self.hessian.trace())
    }

    fn trace_hessian_gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(w.as_slice())?;
        Ok(DVector::zeros(self.dim()))
    }

    fn noise_function(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(w.as_slice())?;
        Ok(self.design.transpose() / self.labels.len() as f64)
    }

    fn noise_scale(&self) -> f64 {
        1.0 / self.labels.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_hessian_is_scaled_identity() {
        let m = QuadraticModel::isotropic(4, 2.5);
        let h = m.hessian(&DVector::zeros(4)).unwrap();
        assert!((h.as_matrix() - DMatrix::identity(4, 4) * 2.5).amax() < 1e-14);
        let w = DVector::from_vec(vec![1.0, 0.0, -1.0, 2.0]);
        assert!((m.loss(&w).unwrap() - 0.5 * 2.5 * 6.0).abs() < 1e-13);
    }

    #[test]
    fn third_derivative_vanishes() {
        let m = QuadraticModel::diagonal(&[1.0, 2.0]);
        let s = SymMatrix::identity(2);
        assert_eq!(m.third_derivative_contract(&DVector::zeros(2), &s).unwrap(), DVector::zeros(2));
    }
}
