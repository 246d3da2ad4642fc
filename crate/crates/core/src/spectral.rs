//! Linearized noiseless momentum GD in the extended phase space `(π, w)`.
//!
//! Around a fixed point the update is `δx' = J δx` with
//! `J = [[β I, -H], [ηβ I, I - ηH]]`. Each Hessian eigenpair `(λ, q)` spans a
//! two-dimensional invariant block with eigenvalues
//! `κ± = ½(A ± √(A² - 4β))`, `A = 1 + β - ηλ`, and eigenvectors `(μ± q, q)`.

use std::fmt;
use std::io::Write;

use nalgebra::{Complex, DMatrix};

use crate::numerics::{sym_eigendecomposition, SymMatrix};
use crate::optimizer::Scaling;
use crate::{Error, Result};

/// Tolerance of the case split at the discriminant boundaries.
pub const MARGINAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeCase {
    /// `ηλ < (1-√β)²`: two positive real eigenvalues.
    RealDecay,
    /// `(1-√β)² < ηλ < (1+√β)²`: conjugate pair on the circle `|κ| = √β`.
    ComplexSpiral,
    /// `(1+√β)² < ηλ < 2(1+β)`: two negative real eigenvalues, still inside
    /// the unit circle.
    Alternating,
    /// Within [`MARGINAL_TOL`] of a discriminant boundary.
    Marginal,
    /// `ηλ ≥ 2(1+β)`.
    Unstable,
}

impl ModeCase {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeCase::RealDecay => "real-decay",
            ModeCase::ComplexSpiral => "complex-spiral",
            ModeCase::Alternating => "alternating",
            ModeCase::Marginal => "marginal",
            ModeCase::Unstable => "unstable",
        }
    }
}

impl fmt::Display for ModeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The Jacobian block belonging to one Hessian eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralMode {
    pub lambda: f64,
    pub kappa_plus: Complex<f64>,
    pub kappa_minus: Complex<f64>,
    /// Eigenvector coefficients; `None` when `β = 0`, where they are undefined.
    pub mu_plus: Option<Complex<f64>>,
    pub mu_minus: Option<Complex<f64>>,
    pub case: ModeCase,
}

impl SpectralMode {
    pub fn momentum_free(&self) -> bool {
        self.mu_plus.is_none()
    }
}

/// `[[β I, -H], [ηβ I, I - ηH]]`.
pub fn extended_jacobian(h: &SymMatrix, eta: f64, beta: f64) -> DMatrix<f64> {
    let d = h.dim();
    let hm = h.as_matrix();
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, i)] = beta;
        j[(d + i, i)] = eta * beta;
        j[(d + i, d + i)] = 1.0;
    }
    j.view_mut((0, d), (d, d)).copy_from(&(-hm));
    let mut lower = j.view_mut((d, d), (d, d));
    lower -= hm * eta;
    j
}

pub fn classify_mode(lambda: f64, eta: f64, beta: f64) -> ModeCase {
    let x = eta * lambda;
    let lo = (1.0 - beta.sqrt()).powi(2);
    let hi = (1.0 + beta.sqrt()).powi(2);
    if x >= 2.0 * (1.0 + beta) {
        ModeCase::Unstable
    } else if (x - lo).abs() < MARGINAL_TOL || (x - hi).abs() < MARGINAL_TOL {
        ModeCase::Marginal
    } else if x < lo {
        ModeCase::RealDecay
    } else if x < hi {
        ModeCase::ComplexSpiral
    } else {
        ModeCase::Alternating
    }
}

fn check_hyper(eta: f64, beta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("eta = {eta} must be positive")));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidHyperparameter(format!("beta = {beta} outside [0, 1)")));
    }
    Ok(())
}

pub fn mode_eigs(lambda: f64, eta: f64, beta: f64) -> Result<SpectralMode> {
    check_hyper(eta, beta)?;
    let case = classify_mode(lambda, eta, beta);
    let c = |x: f64| Complex::new(x, 0.0);
    if beta == 0.0 {
        return Ok(SpectralMode {
            lambda,
            kappa_plus: c(1.0 - eta * lambda),
            kappa_minus: c(0.0),
            mu_plus: None,
            mu_minus: None,
            case,
        });
    }
    let a = 1.0 + beta - eta * lambda;
    let disc = a * a - 4.0 * beta;
    let (kp, km) = if disc >= 0.0 {
        let s = disc.sqrt();
        // the larger root directly, the smaller from the product κ₊κ₋ = β
        if a >= 0.0 {
            let kp = 0.5 * (a + s);
            (c(kp), c(beta / kp))
        } else {
            let km = 0.5 * (a - s);
            (c(beta / km), c(km))
        }
    } else {
        let s = (-disc).sqrt();
        (Complex::new(0.5 * a, 0.5 * s), Complex::new(0.5 * a, -0.5 * s))
    };
    let shift = eta * lambda - 1.0;
    let mu = |k: Complex<f64>| (k + shift) / (beta * eta);
    Ok(SpectralMode {
        lambda,
        kappa_plus: kp,
        kappa_minus: km,
        mu_plus: Some(mu(kp)),
        mu_minus: Some(mu(km)),
        case,
    })
}

/// Exact extremes of the stable eigenvalue moduli, next to the small-η
/// predictions when the momentum scaling is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoBounds {
    pub rho1: f64,
    pub rho2: f64,
    /// `(ρ₁, ρ₂)` from the small-η asymptotics; absent at `γ = ½` or without a
    /// positive eigenvalue.
    pub predicted: Option<(f64, f64)>,
}

const UNIT_TOL: f64 = 1e-12;

fn positive_floor(spectrum: &[f64]) -> Option<f64> {
    let top = spectrum.iter().cloned().fold(0.0, f64::max);
    spectrum
        .iter()
        .cloned()
        .filter(|&l| l > crate::numerics::DEFAULT_RANK_TOL * top.max(1.0))
        .reduce(f64::min)
}

fn clean_spectrum(spectrum: &[f64]) -> Result<Vec<f64>> {
    let top = spectrum.iter().map(|l| l.abs()).fold(0.0, f64::max);
    spectrum
        .iter()
        .map(|&l| {
            if !l.is_finite() {
                Err(Error::domain(format!("non-finite eigenvalue {l}")))
            } else if l < -1e-10 * top.max(1.0) {
                Err(Error::domain(format!("eigenvalue {l} is negative; Hessian not PSD")))
            } else {
                Ok(l.max(0.0))
            }
        })
        .collect()
}

fn extremes(modes: &[SpectralMode]) -> (f64, f64) {
    let mut rho1 = f64::NAN;
    let mut rho2 = f64::NAN;
    for m in modes {
        for k in [m.kappa_plus, m.kappa_minus] {
            let r = k.norm();
            if r < 1.0 - UNIT_TOL {
                rho1 = if rho1.is_nan() { r } else { rho1.max(r) };
                rho2 = if rho2.is_nan() { r } else { rho2.min(r) };
            }
        }
    }
    (rho1, rho2)
}

/// The small-η predictions `(ρ₁, ρ₂)` for `β = 1 - Cη^γ`.
pub fn predicted_rho(scaling: Scaling, eta: f64, c1: f64) -> Option<(f64, f64)> {
    let Scaling { gamma, c } = scaling;
    let beta = 1.0 - c * eta.powf(gamma);
    if gamma < 0.5 {
        Some((1.0 - (c1 / c) * eta.powf(1.0 - gamma), beta))
    } else if gamma > 0.5 {
        Some((beta.sqrt(), beta))
    } else {
        None
    }
}

pub fn rho_bounds(
    spectrum: &[f64],
    eta: f64,
    beta: f64,
    scaling: Option<Scaling>,
) -> Result<RhoBounds> {
    check_hyper(eta, beta)?;
    let spectrum = clean_spectrum(spectrum)?;
    let offending: Vec<f64> = spectrum
        .iter()
        .cloned()
        .filter(|&l| classify_mode(l, eta, beta) == ModeCase::Unstable)
        .collect();
    if !offending.is_empty() {
        return Err(Error::Unstable { offending });
    }
    let modes = spectrum
        .iter()
        .map(|&l| mode_eigs(l, eta, beta))
        .collect::<Result<Vec<_>>>()?;
    let (rho1, rho2) = extremes(&modes);
    let predicted = match (scaling, positive_floor(&spectrum)) {
        (Some(s), Some(c1)) => predicted_rho(s, eta, c1),
        _ => None,
    };
    Ok(RhoBounds {
        rho1,
        rho2,
        predicted,
    })
}

/// Equilibration-rate exponents: each rate is `∝ η^exponent`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tau1Table {
    pub longitudinal: f64,
    pub transverse: Vec<f64>,
    /// Exponent of the slowest finite rate.
    pub slowest: f64,
    /// The slowest rate itself, `(c₁/C)η^{1-γ}` for `γ ≤ ½` and `(C/2)η^γ` above.
    pub slowest_rate: f64,
    /// Exponent `2(1-γ)` of the drift rate along the manifold.
    pub drift: f64,
}

impl Tau1Table {
    /// Whether equilibration and drift scale alike in `η`.
    pub fn collides(&self, tol: f64) -> bool {
        (self.slowest - self.drift).abs() <= tol
    }
}

pub fn tau1_prediction(gamma: f64, eta: f64, c: f64, c1: f64) -> Result<Tau1Table> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidHyperparameter(format!("gamma = {gamma} outside [0, 1]")));
    }
    Ok(if gamma <= 0.5 {
        Tau1Table {
            longitudinal: gamma,
            transverse: vec![1.0 - gamma, gamma],
            slowest: 1.0 - gamma,
            slowest_rate: (c1 / c) * eta.powf(1.0 - gamma),
            drift: 2.0 * (1.0 - gamma),
        }
    } else {
        Tau1Table {
            longitudinal: gamma,
            transverse: vec![gamma, gamma],
            slowest: gamma,
            slowest_rate: 0.5 * c * eta.powf(gamma),
            drift: 2.0 * (1.0 - gamma),
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub modes: Vec<SpectralMode>,
    pub rho1: f64,
    pub rho2: f64,
    /// `-1 / ln ρ₁`, the slowest equilibration time in steps.
    pub tau1: f64,
    pub stable: bool,
    pub c1: f64,
    pub c2: f64,
}

impl SpectralReport {
    pub fn from_spectrum(spectrum: &[f64], eta: f64, beta: f64) -> Result<Self> {
        check_hyper(eta, beta)?;
        let spectrum = clean_spectrum(spectrum)?;
        let modes = spectrum
            .iter()
            .map(|&l| mode_eigs(l, eta, beta))
            .collect::<Result<Vec<_>>>()?;
        let (rho1, rho2) = extremes(&modes);
        let c1 = positive_floor(&spectrum).unwrap_or(0.0);
        let c2 = spectrum.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            stable: modes.iter().all(|m| m.case != ModeCase::Unstable),
            tau1: -1.0 / rho1.ln(),
            modes,
            rho1,
            rho2,
            c1,
            c2,
        })
    }

    pub fn from_hessian(h: &SymMatrix, eta: f64, beta: f64) -> Result<Self> {
        let eig = sym_eigendecomposition(h)?;
        Self::from_spectrum(eig.eigenvalues.as_slice(), eta, beta)
    }

    /// One row per mode, then a `rho_bounds` row carrying `ρ₁` and `ρ₂` in the
    /// modulus columns.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "lambda,kappa_plus_re,kappa_plus_im,kappa_minus_re,kappa_minus_im,case,abs_kappa_plus,abs_kappa_minus"
        )?;
        for m in &self.modes {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
                m.lambda,
                m.kappa_plus.re,
                m.kappa_plus.im,
                m.kappa_minus.re,
                m.kappa_minus.im,
                m.case,
                m.kappa_plus.norm(),
                m.kappa_minus.norm()
            )?;
        }
        writeln!(out, "rho_bounds,,,,,,{:.16e},{:.16e}", self.rho1, self.rho2)
    }
}
