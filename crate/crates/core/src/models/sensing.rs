use nalgebra::{DMatrix, DVector};

use super::{Model, SensingData};
use crate::numerics::SymMatrix;
use crate::{Error, Result};

/// Matrix sensing with an asymmetric factorization `X = U V`,
/// `L = (1/dP) Σ_i (y_i - Tr(A_i U V))²`.
///
/// Parameters are `(U, V)`, each `d × d` flattened column-major.
#[derive(Debug, Clone)]
pub struct MatrixSensingModel {
    d: usize,
    sensing: Vec<DMatrix<f64>>,
    labels: Vec<f64>,
    /// `(1/P) Σ A_i A_iᵀ`
    sigma1: DMatrix<f64>,
    /// `(1/P) Σ A_iᵀ A_i`
    sigma2: DMatrix<f64>,
    target: Option<DMatrix<f64>>,
}

impl MatrixSensingModel {
    pub fn new(sensing: Vec<DMatrix<f64>>, labels: Vec<f64>) -> Result<Self> {
        let d = sensing.first().map(|a| a.nrows()).unwrap_or(0);
        if d == 0 || sensing.iter().any(|a| a.nrows() != d || a.ncols() != d) {
            return Err(Error::contract("sensing matrices must be non-empty and d x d"));
        }
        if sensing.len() != labels.len() {
            return Err(Error::contract("one label per sensing matrix"));
        }
        let p = sensing.len() as f64;
        let mut sigma1 = DMatrix::zeros(d, d);
        let mut sigma2 = DMatrix::zeros(d, d);
        for a in &sensing {
            sigma1 += a * a.transpose();
            sigma2 += a.transpose() * a;
        }
        Ok(Self {
            d,
            sensing,
            labels,
            sigma1: sigma1 / p,
            sigma2: sigma2 / p,
            target: None,
        })
    }

    pub fn from_data(data: &SensingData) -> Result<Self> {
        let mut m = Self::new(data.sensing.clone(), data.labels.clone())?;
        m.target = Some(data.target.clone());
        Ok(m)
    }

    pub fn side(&self) -> usize {
        self.d
    }

    pub fn measurements(&self) -> usize {
        self.sensing.len()
    }

    pub fn sensing_matrices(&self) -> &[DMatrix<f64>] {
        &self.sensing
    }

    pub fn target(&self) -> Option<&DMatrix<f64>> {
        self.target.as_ref()
    }

    /// Mean squared sensing entry `⟨a_ij²⟩`.
    pub fn entry_second_moment(&self) -> f64 {
        self.sigma1.trace() / (self.d * self.d) as f64
    }

    /// Splits a parameter vector into `(U, V)`.
    pub fn factors(&self, w: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let dd = self.d * self.d;
        (
            DMatrix::from_column_slice(self.d, self.d, &w[..dd]),
            DMatrix::from_column_slice(self.d, self.d, &w[dd..]),
        )
    }

    pub fn pack(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len() + v.len(),
            u.iter().chain(v.iter()).copied(),
        )
    }

    /// Parameters `U = V = I`.
    pub fn identity_init(&self) -> DVector<f64> {
        let i = DMatrix::identity(self.d, self.d);
        Self::pack(&i, &i)
    }

    /// Expected test error over fresh Gaussian sensing matrices with the label
    /// noise switched off: `E_A[(Tr(A(UV - X*)))²] / d = ‖UV - X*‖²_F / d`.
    pub fn expected_test_error(&self, w: &[f64]) -> Option<f64> {
        let target = self.target.as_ref()?;
        let (u, v) = self.factors(w);
        Some((u * v - target).norm_squared() / self.d as f64)
    }

    /// `∇_w f_i` for `f_i = Tr(A_i U V)`, as rows of a `P × D` Jacobian.
    fn jacobian(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let dd = self.d * self.d;
        let mut jac = DMatrix::zeros(self.measurements(), 2 * dd);
        let (ut, vt) = (u.transpose(), v.transpose());
        for (i, a) in self.sensing.iter().enumerate() {
            let at = a.transpose();
            let gu = &at * &vt;
            let gv = &ut * &at;
            for (k, x) in gu.iter().chain(gv.iter()).enumerate() {
                jac[(i, k)] = *x;
            }
        }
        jac
    }

    /// `Σ_i c_i A_i`.
    fn weighted_sum(&self, coeffs: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::<f64>::zeros(self.d, self.d);
        for (a, c) in self.sensing.iter().zip(coeffs) {
            g += a * *c;
        }
        g
    }

    fn residuals(&self, x: &DMatrix<f64>, labels: &[f64]) -> Vec<f64> {
        self.sensing
            .iter()
            .zip(labels)
            .map(|(a, y)| a.dot(&x.transpose()) - y)
            .collect()
    }
}

impl Model for MatrixSensingModel {
    fn dim(&self) -> usize {
        2 * self.d * self.d
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn loss_with_labels(&self, w: &[f64], labels: &[f64]) -> f64 {
        let (u, v) = self.factors(w);
        let x = u * v;
        let r = self.residuals(&x, labels);
        r.iter().map(|r| r * r).sum::<f64>() / (self.d * self.measurements()) as f64
    }

    fn gradient_with_labels(&self, w: &[f64], labels: &[f64], out: &mut [f64]) {
        let (u, v) = self.factors(w);
        let x = &u * &v;
        let g = self.weighted_sum(&self.residuals(&x, labels));
        let k = 2.0 / (self.d * self.measurements()) as f64;
        let gt = g.transpose();
        let gu = &gt * v.transpose() * k;
        let gv = u.transpose() * &gt * k;
        let dd = self.d * self.d;
        out[..dd].copy_from_slice(gu.as_slice());
        out[dd..].copy_from_slice(gv.as_slice());
    }

    /// `(2/dP) [Σ ∇f_i ∇f_iᵀ + Σ r_i ∇²f_i]`; the second sum couples `U_kl`
    /// with `V_lj` through `G_jk`, `G = Σ r_i A_i`.
    fn hessian(&self, w: &DVector<f64>) -> Result<SymMatrix> {
        self.check_dim(w.as_slice())?;
        let (u, v) = self.factors(w.as_slice());
        let jac = self.jacobian(&u, &v);
        let k = 2.0 / (self.d * self.measurements()) as f64;
        let mut h = jac.transpose() * &jac * k;
        let g = self.weighted_sum(&self.residuals(&(&u * &v), &self.labels));
        let d = self.d;
        let dd = d * d;
        for kk in 0..d {
            for l in 0..d {
                for j in 0..d {
                    let iu = kk + l * d;
                    let iv = dd + l + j * d;
                    let val = k * g[(j, kk)];
                    h[(iu, iv)] += val;
                    h[(iv, iu)] += val;
                }
            }
        }
        Ok(SymMatrix::symmetrize(h))
    }

    /// `(2/d) Tr(Σ² U Uᵀ + Σ¹ Vᵀ V)`, exact on the zero-loss manifold.
    fn trace_hessian(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w.as_slice())?;
        let (u, v) = self.factors(w.as_slice());
        let t = (&self.sigma2 * &u).dot(&u) + (&v * &self.sigma1).dot(&v);
        Ok(2.0 / self.d as f64 * t)
    }

    fn trace_hessian_gradient(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(w.as_slice())?;
        let (u, v) = self.factors(w.as_slice());
        let k = 4.0 / self.d as f64;
        Ok(Self::pack(&(&self.sigma2 * u * k), &(v * &self.sigma1 * k)))
    }

    fn noise_function(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(w.as_slice())?;
        let (u, v) = self.factors(w.as_slice());
        let k = 2.0 / (self.d * self.measurements()) as f64;
        Ok(self.jacobian(&u, &v).transpose() * k)
    }

    fn noise_scale(&self) -> f64 {
        2.0 / (self.d * self.measurements()) as f64
    }

    fn manifold_dim(&self) -> Option<usize> {
        Some(self.dim().saturating_sub(self.measurements()))
    }
}

impl MatrixSensingModel {
    /// `Ŝ (U, V) = (Σ² U, V Σ¹)`, so that `∇ Tr H = (4/d) Ŝ w`.
    pub fn covariance_apply(&self, w: &[f64]) -> DVector<f64> {
        let (u, v) = self.factors(w);
        Self::pack(&(&self.sigma2 * u), &(v * &self.sigma1))
    }
}
