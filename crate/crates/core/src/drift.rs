//! Slow motion along the zero-loss manifold Γ.
//!
//! Near Γ, noise-driven fluctuations transverse to the manifold feed back
//! into a drift along it. The drift is proportional to `ε² η^{2-2γ} / C²`
//! and, for label noise, follows the gradient of the Hessian trace.
//! Time is measured in optimizer steps and `ε` is carried explicitly: the
//! covariance passed to [`limiting_drift`] is the unit-amplitude `σσᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::models::Model;
use crate::numerics::{sym_eigendecomposition, RandomStream, SymEigen, SymMatrix, DEFAULT_RANK_TOL};
use crate::optimizer::{project_to_manifold, ProjectionOptions};
use crate::{Error, Result};

/// Relative tolerance for membership in `W_H` and for the label-noise check `Σ = cH`.
pub const SUBSPACE_TOL: f64 = 1e-9;
pub const LABEL_NOISE_TOL: f64 = 1e-6;

/// Learning rate, momentum scaling and noise amplitude entering the drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    pub eta: f64,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
}

impl DriftParams {
    fn validate(&self) -> Result<()> {
        let ok = self.eta > 0.0
            && self.eta.is_finite()
            && self.c > 0.0
            && self.c.is_finite()
            && (0.0..=1.0).contains(&self.gamma)
            && self.epsilon >= 0.0
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidHyperparameter(format!("{self:?}")))
        }
    }

    /// `η^{2-2γ} / C²`.
    pub fn drift_scale(&self) -> f64 {
        self.eta.powf(2.0 - 2.0 * self.gamma) / (self.c * self.c)
    }

    /// `ε (C⁻¹ η^{1-γ} + η)`, the coefficient of `P_L σ dW`.
    pub fn diffusion_factor(&self) -> f64 {
        self.epsilon * (self.eta.powf(1.0 - self.gamma) / self.c + self.eta)
    }

    /// `½ C⁻² η^{1-2γ}`, the commutator weight in `L̃_H`.
    pub fn commutator_weight(&self) -> f64 {
        0.5 * self.eta.powf(1.0 - 2.0 * self.gamma) / (self.c * self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChartWarning {
    /// An eigenvalue within a factor of 10 of the rank cut.
    RankAmbiguous { eigenvalue: f64, cut: f64 },
    /// The Hessian rank differs from `D - M` for the model's known `M`.
    RankMismatch { expected: usize, found: usize },
}

/// Local geometry of Γ at a point: Hessian, its range and kernel projectors,
/// and its pseudoinverse.
#[derive(Debug, Clone)]
pub struct ManifoldChart {
    pub base: DVector<f64>,
    pub hessian: SymMatrix,
    pub eigen: SymEigen,
    /// `rank H = D - M`.
    pub rank: usize,
    pub p_l: SymMatrix,
    pub p_t: SymMatrix,
    pub h_dagger: SymMatrix,
    pub warnings: Vec<ChartWarning>,
}

/// Splits `ℝ^D` into the range of `H` (transverse) and its kernel (tangent).
pub fn tangent_projectors(base: DVector<f64>, h: SymMatrix, rank_tol: f64) -> Result<ManifoldChart> {
    if !(rank_tol > 0.0) {
        return Err(Error::domain("rank_tol must be positive"));
    }
    if base.len() != h.dim() {
        return Err(Error::contract("base point and Hessian sizes differ"));
    }
    let d = h.dim();
    let eigen = sym_eigendecomposition(&h)?;
    let top = eigen.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = rank_tol * top;
    let rank = eigen.eigenvalues.iter().filter(|&&l| l > cut).count();
    let warnings = eigen
        .eigenvalues
        .iter()
        .filter(|&&l| l > cut / 10.0 && l < cut * 10.0)
        .map(|&eigenvalue| ChartWarning::RankAmbiguous { eigenvalue, cut })
        .collect();
    let qt = eigen.eigenvectors.columns(0, rank);
    let p_t = SymMatrix::symmetrize(&qt * qt.transpose());
    let p_l = SymMatrix::symmetrize(DMatrix::identity(d, d) - p_t.as_matrix());
    let inv = DVector::from_iterator(rank, eigen.eigenvalues.iter().take(rank).map(|l| 1.0 / l));
    let h_dagger = SymMatrix::symmetrize(&qt * DMatrix::from_diagonal(&inv) * qt.transpose());
    Ok(ManifoldChart {
        base,
        hessian: h,
        eigen,
        rank,
        p_l,
        p_t,
        h_dagger,
        warnings,
    })
}

impl ManifoldChart {
    /// Chart at `w` from the model Hessian, flagging a rank that disagrees
    /// with the model's manifold dimension.
    pub fn at<M: Model + ?Sized>(model: &M, w: &DVector<f64>, rank_tol: f64) -> Result<Self> {
        let mut chart = tangent_projectors(w.clone(), model.hessian(w)?, rank_tol)?;
        if let Some(m) = model.manifold_dim() {
            let expected = model.dim() - m;
            if chart.rank != expected {
                chart.warnings.push(ChartWarning::RankMismatch {
                    expected,
                    found: chart.rank,
                });
            }
        }
        Ok(chart)
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// No tangent directions: the manifold is a point.
    pub fn degenerate(&self) -> bool {
        self.rank == self.dim()
    }

    fn transverse_basis(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.eigen.eigenvectors.columns(0, self.rank)
    }

    fn check_in_range(&self, s: &DMatrix<f64>) -> Result<()> {
        if s.nrows() != self.dim() || s.ncols() != self.dim() {
            return Err(Error::contract("matrix size does not match the chart"));
        }
        let scale = s.norm().max(f64::MIN_POSITIVE);
        let asym = (s - s.transpose()).norm();
        let pt = self.p_t.as_matrix();
        let leak = (s - pt * s * pt).norm();
        if asym > SUBSPACE_TOL * scale || leak > SUBSPACE_TOL * scale {
            return Err(Error::domain(format!(
                "matrix is not symmetric and supported on the range of H (asymmetry {asym:e}, leakage {leak:e})"
            )));
        }
        Ok(())
    }

    /// `L̃_H S = {H, S} + k [[S, H], H]` with `k = ½ C⁻² η^{1-2γ}`.
    pub fn ltilde_apply(&self, s: &DMatrix<f64>, params: &DriftParams) -> Result<DMatrix<f64>> {
        params.validate()?;
        self.check_in_range(s)?;
        let h = self.hessian.as_matrix();
        let k = params.commutator_weight();
        let hs = h * s;
        let sh = s * h;
        let double = &sh * h - (h * s * h) * 2.0 + h * &hs;
        Ok(&hs + &sh + double * k)
    }

    /// Solves `L̃_H S = M` on `W_H` entrywise in the eigenbasis of `H`.
    pub fn ltilde_inverse(&self, m: &DMatrix<f64>, params: &DriftParams) -> Result<SymMatrix> {
        params.validate()?;
        self.check_in_range(m)?;
        let k = params.commutator_weight();
        let q = self.transverse_basis();
        let lam = &self.eigen.eigenvalues;
        let mut inner = q.transpose() * m * q;
        for i in 0..self.rank {
            for j in 0..self.rank {
                inner[(i, j)] /= lam[i] + lam[j] + k * (lam[i] - lam[j]).powi(2);
            }
        }
        Ok(SymMatrix::symmetrize(q * inner * q.transpose()))
    }
}

/// `L̃_H S` using a chart built from `H` alone.
pub fn ltilde_apply(h: &SymMatrix, s: &DMatrix<f64>, params: &DriftParams) -> Result<DMatrix<f64>> {
    tangent_projectors(DVector::zeros(h.dim()), h.clone(), DEFAULT_RANK_TOL)?.ltilde_apply(s, params)
}

/// `L̃_H⁻¹ M` using a chart built from `H` alone.
pub fn ltilde_inverse(h: &SymMatrix, m: &DMatrix<f64>, params: &DriftParams) -> Result<SymMatrix> {
    tangent_projectors(DVector::zeros(h.dim()), h.clone(), DEFAULT_RANK_TOL)?.ltilde_inverse(m, params)
}

/// Drift along Γ in steps⁻¹, split by the covariance block that produces it.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    pub drift: DVector<f64>,
    /// From `Σ_LL`; lies in the range of `H` and keeps diffusion on a curved Γ.
    pub ll: DVector<f64>,
    pub tl: DVector<f64>,
    pub tt: DVector<f64>,
    /// Coefficient of `P_L σ dW`.
    pub diffusion_factor: f64,
    /// The chart had no tangent directions; the drift is zero by construction.
    pub degenerate: bool,
}

impl DriftField {
    fn zero(d: usize, params: &DriftParams, degenerate: bool) -> Self {
        Self {
            drift: DVector::zeros(d),
            ll: DVector::zeros(d),
            tl: DVector::zeros(d),
            tt: DVector::zeros(d),
            diffusion_factor: params.diffusion_factor(),
            degenerate,
        }
    }

    /// The part of the drift produced by transverse fluctuations.
    pub fn fluctuation_part(&self) -> DVector<f64> {
        &self.tl + &self.tt
    }
}

fn check_covariance(sigma: &SymMatrix) -> Result<()> {
    let eig = sym_eigendecomposition(sigma)?;
    let top = eig.eigenvalues.amax();
    let bottom = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !top.is_finite() || bottom < -1e-10 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::domain(format!("noise covariance is not PSD (min eigenvalue {bottom:e})")));
    }
    Ok(())
}

/// Drift for a general covariance `Σ = σσᵀ` at the chart point.
pub fn limiting_drift<M: Model + ?Sized>(
    model: &M,
    chart: &ManifoldChart,
    sigma: &SymMatrix,
    params: &DriftParams,
) -> Result<DriftField> {
    params.validate()?;
    if sigma.dim() != chart.dim() || model.dim() != chart.dim() {
        return Err(Error::contract("covariance, model and chart sizes differ"));
    }
    check_covariance(sigma)?;
    if chart.degenerate() {
        return Ok(DriftField::zero(chart.dim(), params, true));
    }
    let w = &chart.base;
    let s = sigma.as_matrix();
    let pl = chart.p_l.as_matrix();
    let pt = chart.p_t.as_matrix();
    let k = params.epsilon * params.epsilon * params.drift_scale();

    let s_ll = SymMatrix::symmetrize(pl * s * pl);
    let s_tl = pt * s * pl;
    let s_tt = SymMatrix::symmetrize(pt * s * pt);

    let ll = chart.h_dagger.as_matrix() * model.third_derivative_contract(w, &s_ll)? * (-0.5 * k);
    // the third derivative is symmetric in its contracted pair, so only the
    // symmetric part of H†Σ_TL matters
    let tl_dir = SymMatrix::symmetrize(chart.h_dagger.as_matrix() * s_tl);
    let tl = pl * model.third_derivative_contract(w, &tl_dir)? * (-k);
    let tt_dir = chart.ltilde_inverse(s_tt.as_matrix(), params)?;
    let tt = pl * model.third_derivative_contract(w, &tt_dir)? * (-0.5 * k);

    Ok(DriftField {
        drift: &ll + &tl + &tt,
        ll,
        tl,
        tt,
        diffusion_factor: params.diffusion_factor(),
        degenerate: false,
    })
}

/// Drift for label noise, `Σ = cH`: `-(ε² η^{2-2γ} / 4C²) P_L ∇Tr(cH)`.
pub fn label_noise_drift<M: Model + ?Sized>(
    model: &M,
    chart: &ManifoldChart,
    c: f64,
    params: &DriftParams,
) -> Result<DriftField> {
    params.validate()?;
    if !(c > 0.0) {
        return Err(Error::domain("label-noise scale must be positive"));
    }
    let w = &chart.base;
    let sigma = model.noise_function(w)?;
    let cov = &sigma * sigma.transpose();
    let target = chart.hessian.as_matrix() * c;
    let mismatch = (&cov - &target).norm();
    let scale = target.norm().max(cov.norm());
    if mismatch > LABEL_NOISE_TOL * scale {
        return Err(Error::ModelMismatch(format!(
            "noise covariance differs from cH by {:e} (relative)",
            mismatch / scale
        )));
    }
    if chart.degenerate() {
        return Ok(DriftField::zero(chart.dim(), params, true));
    }
    let k = params.epsilon * params.epsilon * params.drift_scale();
    let grad = model.trace_hessian_gradient(w)?;
    let tt = chart.p_l.as_matrix() * grad * (-0.25 * k * c);
    Ok(DriftField {
        drift: tt.clone(),
        ll: DVector::zeros(chart.dim()),
        tl: DVector::zeros(chart.dim()),
        tt,
        diffusion_factor: params.diffusion_factor(),
        degenerate: false,
    })
}

/// `τ₂⁻¹ = η^{2-2γ} ε² μ₂ / (2 n P C²)`, the decay rate of `(u, v)` in the
/// vector UV model.
pub fn uv_drift_rate(eta: f64, gamma: f64, c: f64, epsilon: f64, mu2: f64, n: usize, p: usize) -> f64 {
    eta.powf(2.0 - 2.0 * gamma) * epsilon * epsilon * mu2 / (2.0 * n as f64 * p as f64 * c * c)
}

/// The prefactor that makes equilibration and drift times equal in the
/// vector UV model: `(ε² μ₂ / (P n))^{1/3}`.
pub fn optimal_c(epsilon: f64, mu2: f64, p: usize, n: usize) -> f64 {
    (epsilon * epsilon * mu2 / (p as f64 * n as f64)).cbrt()
}

/// Matrix-sensing analog: `(2 ε² ⟨a²⟩ / (d P))^{1/3}`.
pub fn matrix_sensing_c(epsilon_sq: f64, a_second_moment: f64, d: usize, p: usize) -> f64 {
    (2.0 * epsilon_sq * a_second_moment / (d as f64 * p as f64)).cbrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftMode {
    /// Closed label-noise form with `Σ = cH`.
    LabelNoise { c: f64 },
    /// General three-term drift with `Σ = σσᵀ` from the model.
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOptions {
    /// Total time in steps.
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
    pub mode: DriftMode,
    /// Include the `P_L σ dW` term.
    pub diffusion: bool,
    pub rank_tol: f64,
    /// Loss below which a point counts as on Γ.
    pub manifold_tol: f64,
    pub retraction_steps: u64,
}

impl IntegrationOptions {
    pub fn new(horizon: f64, mode: DriftMode) -> Self {
        Self {
            horizon,
            dt: 1.0,
            record_every: 1,
            mode,
            diffusion: true,
            rank_tol: DEFAULT_RANK_TOL,
            manifold_tol: 1e-12,
            retraction_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPath {
    pub times: Vec<f64>,
    pub points: Vec<DVector<f64>>,
}

/// Largest relative move of `w` allowed in one sub-step.
const MAX_RELATIVE_MOVE: f64 = 0.01;

/// Euler-Maruyama on Γ with a noiseless momentum-GD retraction after each step.
pub fn integrate_drift<M: Model + ?Sized>(
    model: &M,
    w0: &DVector<f64>,
    params: &DriftParams,
    options: &IntegrationOptions,
    rng: &mut RandomStream,
) -> Result<ManifoldPath> {
    params.validate()?;
    if !(options.dt > 0.0 && options.horizon >= 0.0 && options.record_every > 0) {
        return Err(Error::contract("integration needs dt > 0, horizon >= 0, record_every > 0"));
    }
    let start_loss = model.loss(w0)?;
    if start_loss > options.manifold_tol.max(1e-8) {
        return Err(Error::domain(format!("start point has loss {start_loss:e}, not on the manifold")));
    }
    let mut w = w0.clone();
    let mut t = 0.0;
    let mut path = ManifoldPath {
        times: vec![0.0],
        points: vec![w.clone()],
    };
    let fail = |t: f64, reason: String, path: &ManifoldPath| Error::IntegrationFailure {
        t,
        reason,
        partial: path.times.iter().cloned().zip(path.points.iter().cloned()).collect(),
    };
    let mut step = 0usize;
    while t < options.horizon {
        let chart = ManifoldChart::at(model, &w, options.rank_tol)?;
        let field = match options.mode {
            DriftMode::LabelNoise { c } => label_noise_drift(model, &chart, c, params)?,
            DriftMode::General => {
                let s = model.noise_function(&w)?;
                limiting_drift(model, &chart, &SymMatrix::symmetrize(&s * s.transpose()), params)?
            }
        };
        let mut h = options.dt.min(options.horizon - t);
        let speed = field.drift.norm();
        let size = w.norm();
        if speed * h > MAX_RELATIVE_MOVE * size && size > 0.0 {
            h = MAX_RELATIVE_MOVE * size / speed;
        }
        let mut next = &w + &field.drift * h;
        if options.diffusion && params.epsilon > 0.0 {
            let sigma = model.noise_function(&w)?;
            let xi = DVector::from_vec(rng.gaussians(sigma.ncols()));
            next += chart.p_l.as_matrix() * (sigma * xi) * (field.diffusion_factor * h.sqrt());
        }
        let top = chart.eigen.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let defaults = ProjectionOptions::default();
        let retraction = ProjectionOptions {
            eta: (top > 0.0).then(|| 0.1 * 2.0 * (1.0 + defaults.beta) / top),
            max_steps: options.retraction_steps,
            ..defaults
        };
        w = match project_to_manifold(model, &next, options.manifold_tol, &retraction) {
            Ok(p) => p.w,
            Err(e) => return Err(fail(t, format!("retraction failed: {e}"), &path)),
        };
        if w.iter().any(|x| !x.is_finite()) {
            return Err(fail(t, "non-finite state".into(), &path));
        }
        t += h;
        step += 1;
        if step % options.record_every == 0 || t >= options.horizon {
            path.times.push(t);
            path.points.push(w.clone());
        }
    }
    Ok(path)
}
