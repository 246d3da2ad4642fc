use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative eigenvalue threshold below which a Hessian direction counts as flat.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 10_000;

/// A real symmetric matrix. Symmetry is checked (or imposed) on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` if `max|m - mᵀ| <= 1e-12 * max|m|`, then symmetrizes it exactly.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::contract(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::domain(format!(
                "matrix is not symmetric: max asymmetry {asym:e} vs scale {scale:e}"
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Returns `(m + mᵀ) / 2`.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// `q qᵀ`.
    pub fn outer(q: &DVector<f64>) -> Self {
        SymMatrix(q * q.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, k: f64) -> Self {
        SymMatrix(&self.0 * k)
    }

    /// `A X A` for symmetric `A`, which is again symmetric.
    pub fn sandwich(&self, a: &SymMatrix) -> Self {
        Self::symmetrize(&a.0 * &self.0 * &a.0)
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, one per column, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SymEigen {
    /// Rebuilds `Q diag(f(λ)) Qᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let q = &self.eigenvectors;
        let d = DMatrix::from_diagonal(&self.eigenvalues.map(f));
        SymMatrix::symmetrize(q * d * q.transpose())
    }

    /// Number of eigenvalues with `|λ| > rank_tol * max|λ|`.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let cut = rank_tol * self.eigenvalues.amax();
        self.eigenvalues.iter().filter(|l| l.abs() > cut).count()
    }
}

/// Symmetric eigendecomposition `A = Q Λ Qᵀ` with eigenvalues sorted descending.
pub fn sym_eigendecomposition(a: &SymMatrix) -> Result<SymEigen> {
    let n = a.dim();
    if n == 0 {
        return Ok(SymEigen {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::try_new(a.0.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or_else(
        || Error::NumericalFailure {
            reason: "symmetric eigensolver did not converge".into(),
            iterations: EIGEN_MAX_ITER,
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Moore-Penrose pseudoinverse; eigenvalues with `|λ| <= rank_tol * max|λ|` are dropped.
pub fn pseudo_inverse(a: &SymMatrix, rank_tol: f64) -> Result<SymMatrix> {
    if !(rank_tol > 0.0) {
        return Err(Error::domain("rank_tol must be positive"));
    }
    let eig = sym_eigendecomposition(a)?;
    let cut = rank_tol * eig.eigenvalues.amax();
    Ok(eig.map_spectrum(|l| if l.abs() > cut { 1.0 / l } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_sym(n: usize, seed: u64) -> SymMatrix {
        let mut rng = crate::numerics::RandomStream::new(seed, 0);
        let g = DMatrix::from_vec(n, n, rng.gaussians(n * n));
        SymMatrix::symmetrize(g)
    }

    #[test]
    fn diag_two_zero() {
        let a = SymMatrix::from_diagonal(&[2.0, 0.0]);
        let e = sym_eigendecomposition(&a).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[2.0, 0.0]);
        assert_abs_diff_eq!(e.eigenvectors[(0, 0)].abs(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.eigenvectors[(1, 1)].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn swap_matrix_spectrum() {
        let a = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let e = sym_eigendecomposition(&a).unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvalues[1], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        for (n, seed) in [(6, 1), (20, 2), (40, 3)] {
            let a = random_sym(n, seed);
            let e = sym_eigendecomposition(&a).unwrap();
            let q = &e.eigenvectors;
            let lam = DMatrix::from_diagonal(&e.eigenvalues);
            let resid = (a.as_matrix() * q - q * lam).norm();
            assert!(resid <= 1e-10 * a.as_matrix().norm(), "n={n}: {resid:e}");
            let orth = (q.transpose() * q - DMatrix::identity(n, n)).amax();
            assert!(orth < 1e-12, "n={n}: {orth:e}");
            for i in 1..n {
                assert!(e.eigenvalues[i - 1] >= e.eigenvalues[i]);
            }
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::Domain(_))));
    }

    #[test]
    fn pinv_examples() {
        let p = pseudo_inverse(&SymMatrix::from_diagonal(&[2.0, 0.0]), 1e-8).unwrap();
        assert_abs_diff_eq!(p.as_matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0])), epsilon = 1e-15);
        let i = pseudo_inverse(&SymMatrix::identity(4), 1e-8).unwrap();
        assert_abs_diff_eq!(i.as_matrix(), &DMatrix::identity(4, 4), epsilon = 1e-14);
        assert!(pseudo_inverse(&SymMatrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn pinv_is_range_projector() {
        // rank-3 PSD matrix in 8 dimensions
        let mut rng = crate::numerics::RandomStream::new(9, 0);
        let b = DMatrix::from_vec(8, 3, rng.gaussians(24));
        let a = SymMatrix::symmetrize(&b * b.transpose());
        let p = pseudo_inverse(&a, DEFAULT_RANK_TOL).unwrap();
        let aa = a.as_matrix();
        assert!((aa * p.as_matrix() * aa - aa).amax() < 1e-10 * aa.amax());
        let proj = p.as_matrix() * aa;
        assert!((&proj * &proj - &proj).amax() < 1e-9);
        assert_abs_diff_eq!(proj.trace(), 3.0, epsilon = 1e-9);
    }
}
