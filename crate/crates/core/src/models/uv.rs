use nalgebra::{DMatrix, DVector};

use super::{Model, UvData};
use crate::numerics::SymMatrix;
use crate::{Error, Result};

/// Two-layer linear network with scalar input and output,
/// `f(x) = n^{-1/2} (u·v) x`, trained on `L = (1/2P) Σ_a (f(x_a) - y_a)²`.
///
/// Parameters are laid out as `(u, v)`, each of length `n`.
#[derive(Debug, Clone)]
pub struct VectorUvModel {
    n: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    scale: f64,
}

impl VectorUvModel {
    pub fn new(n: usize, inputs: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if n == 0 || inputs.is_empty() {
            return Err(Error::contract("UV model needs n > 0 and at least one sample"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::contract("inputs and labels differ in length"));
        }
        Ok(Self {
            n,
            inputs,
            labels,
            scale: 1.0 / (n as f64).sqrt(),
        })
    }

    pub fn from_data(n: usize, data: &UvData) -> Result<Self> {
        Self::new(n, data.inputs.clone(), data.labels.clone())
    }

    pub fn width(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Dataset variance `μ₂ = (1/P) Σ_a x_a²`.
    pub fn mu2(&self) -> f64 {
        self.inputs.iter().map(|x| x * x).sum::<f64>() / self.samples() as f64
    }

    /// `|u|² + |v|²`.
    pub fn weight_norm_sq(w: &[f64]) -> f64 {
        super::norm_sq(w)
    }

    fn split<'a>(&self, w: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        w.split_at(self.n)
    }

    /// `∂s/∂w` for `s = u·v`, i.e. `(v, u)`.
    fn s_gradient(&self, w: &[f64]) -> DVector<f64> {
        let (u, v) = self.split(w);
        DVector::from_iterator(2 * self.n, v.iter().chain(u).copied())
    }

    /// `dL/ds` and `d²L/ds²` viewing the loss as a function of `s = u·v`.
    fn loss_derivs(&self, w: &[f64]) -> (f64, f64) {
        let (u, v) = self.split(w);
        let s: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let p = self.samples() as f64;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (&x, &y) in self.inputs.iter().zip(&self.labels) {
            let r = s * x * self.scale - y;
            d1 += r * x * self.scale;
            d2 += x * x * self.scale * self.scale;
        }
        (d1 / p, d2 / p)
    }

    fn swap_halves(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        // K m with K = [[0, I], [I, 0]]
        let n = self.n;
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        out.rows_mut(0, n).copy_from(&m.rows(n, n));
        out.rows_mut(n, n).copy_from(&m.rows(0, n));
        out
    }
}

impl Model for VectorUvModel {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }

    // Evaluation order mirrors `MlpModel` with one linear hidden layer so the
    // two agree bit for bit.
    fn loss_with_labels(&self, w: &[f64], labels: &[f64]) -> f64 {
        let (u, v) = self.split(w);
        let mut sum_sq = 0.0;
        for (&x, &y) in self.inputs.iter().zip(labels) {
            let mut f = 0.0;
            for j in 0..self.n {
                f += u[j] * (v[j] * x);
            }
            let r = f * self.scale - y;
            sum_sq += r * r;
        }
        sum_sq / (2.0 * self.samples() as f64)
    }

    fn gradient_with_labels(&self, w: &[f64], labels: &[f64], out: &mut [f64]) {
        let (u, v) = self.split(w);
        let p = self.samples() as f64;
        out.fill(0.0);
        let (gu, gv) = out.split_at_mut(self.n);
        for (&x, &y) in self.inputs.iter().zip(labels) {
            let mut f = 0.0;
            for j in 0..self.n {
                f += u[j] * (v[j] * x);
            }
            let delta = (f * self.scale - y) / p;
            for j in 0..self.n {
                gu[j] += delta * (v[j] * x) * self.scale;
            }
            for j in 0..self.n {
                let dz = delta * u[j] * self.scale;
                gv[j] += dz * x;
            }
        }
    }

    fn hessian(&self, w: &DVector<f64>) -> Result<SymMatrix> {
        self.check_dim(w.as_slice())?;
        let (d1, d2) = self.loss_derivs(w.as_slice());
        let j = self.s_gradient(w.as_slice());
        let k = self.swap_halves(&DMatrix::identity(self.dim(), self.dim()));
        Ok(SymMatrix::symmetrize(&j * j.transpose() * d2 + k * d1))
    }

    /// Exact: `d²L/ds² (2 K S J + Tr(K S) J)` since the loss is quadratic in `s`.
    fn third_derivative_contract(&self, w: &DVector<f64>, s: &SymMatrix) -> Result<DVector<f64>> {
        self.check_dim(w.as_slice())?;
        if s.dim() != self.dim() {
            return Err(Error::contract("contraction matrix has the wrong size"));
        }
        let (_, d2) = self.loss_derivs(w.as_slice());
        let j = self.s_gradient(w.as_slice());
        let ks = self.swap_halves(s.as_matrix());
        Ok((&ks * &j * 2.0 + &j * ks.trace()) * d2)
    }

    /// `(μ₂ / n)(|u|² + |v|²)`; exact at every point for this model.
    fn trace_hessian(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w.as_slice())?;
        Ok(self.mu2() / self.n as f64 * w.norm_squared())
    }

    fn trace_hessian_gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(w.as_slice())?;
        Ok(w * (2.0 * self.mu2() / self.n as f64))
    }

    fn noise_function(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(w.as_slice())?;
        let j = self.s_gradient(w.as_slice());
        let p = self.samples() as f64;
        let mut sigma = DMatrix::zeros(self.dim(), self.samples());
        for (a, &x) in self.inputs.iter().enumerate() {
            sigma.set_column(a, &(&j * (x * self.scale / p)));
        }
        Ok(sigma)
    }

    fn noise_scale(&self) -> f64 {
        1.0 / self.samples() as f64
    }

    fn manifold_dim(&self) -> Option<usize> {
        Some(2 * self.n - 1)
    }
}
