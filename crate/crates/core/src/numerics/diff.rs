use nalgebra::DVector;

use super::SymMatrix;
use crate::{Error, Result};

/// Central-difference gradient of a scalar function, `O(h²)` accurate.
pub fn finite_diff_gradient<F>(f: F, w: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let mut probe = w.clone();
    let mut g = DVector::zeros(w.len());
    for i in 0..w.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Evaluation { index: i });
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Hessian from central differences of an analytic gradient, symmetrized.
pub fn finite_diff_hessian<G>(grad: G, w: &DVector<f64>, h: f64) -> Result<SymMatrix>
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(h > 0.0) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    let n = w.len();
    let mut probe = w.clone();
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        let orig = probe[i];
        probe[i] = orig + h;
        let gp = grad(&probe);
        probe[i] = orig - h;
        let gm = grad(&probe);
        probe[i] = orig;
        let col = (gp - gm) / (2.0 * h);
        super::ensure_finite(col.as_slice()).map_err(|_| Error::Evaluation { index: i })?;
        m.set_column(i, &col);
    }
    Ok(SymMatrix::symmetrize(m))
}
