//! Heavy-ball SGD with label noise:
//! `π' = β π - ∇L̃(w)`, `w' = w + η π'`, where `L̃` is the loss against freshly
//! resampled noisy labels.

use nalgebra::DVector;

use crate::models::{noisy_labels, Model, NoiseMap};
use crate::numerics::RandomStream;
use crate::{Error, PhasePoint, Result};

/// Any observable above this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Momentum scaling `β = 1 - C η^γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub gamma: f64,
    pub c: f64,
}

/// Learning rate and momentum, with the scaling they came from if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub eta: f64,
    pub beta: f64,
    pub scaling: Option<Scaling>,
}

/// `1 - C η^γ`, rejected outside `[0, 1)` rather than clamped.
pub fn beta_from_scaling(eta: f64, gamma: f64, c: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("eta = {eta} must be positive")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("C = {c} must be positive")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidHyperparameter(format!("gamma = {gamma} outside [0, 1]")));
    }
    let beta = 1.0 - c * eta.powf(gamma);
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidHyperparameter(format!(
            "1 - C eta^gamma = {beta} outside [0, 1) for eta = {eta}, gamma = {gamma}, C = {c}"
        )));
    }
    Ok(beta)
}

impl HyperParams {
    pub fn scaled(eta: f64, gamma: f64, c: f64) -> Result<Self> {
        Ok(Self {
            eta,
            beta: beta_from_scaling(eta, gamma, c)?,
            scaling: Some(Scaling { gamma, c }),
        })
    }

    pub fn explicit(eta: f64, beta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidHyperparameter(format!("eta = {eta} must be positive")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidHyperparameter(format!("beta = {beta} outside [0, 1)")));
        }
        Ok(Self {
            eta,
            beta,
            scaling: None,
        })
    }

    /// The prefactor `C = (1 - β) / η^γ` that reproduces this `β` under exponent `γ`.
    pub fn prefactor_for(&self, gamma: f64) -> f64 {
        (1.0 - self.beta) / self.eta.powf(gamma)
    }
}

/// Extended phase point `(π, w)` and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub pi: DVector<f64>,
    pub w: DVector<f64>,
    pub k: u64,
}

impl OptimizerState {
    /// Zero momentum at `w`.
    pub fn at_rest(w: DVector<f64>) -> Self {
        Self {
            pi: DVector::zeros(w.len()),
            w,
            k: 0,
        }
    }

    fn snapshot(&self) -> PhasePoint {
        PhasePoint {
            pi: self.pi.clone(),
            w: self.w.clone(),
            step: self.k,
        }
    }
}

/// Reusable stepper holding the label and gradient buffers.
pub struct Sgdm<'m, M: Model + ?Sized> {
    model: &'m M,
    hyper: HyperParams,
    noise: NoiseMap,
    labels: Vec<f64>,
    grad: Vec<f64>,
    next_pi: DVector<f64>,
}

impl<'m, M: Model + ?Sized> Sgdm<'m, M> {
    pub fn new(model: &'m M, hyper: HyperParams, noise: NoiseMap) -> Result<Self> {
        noise.validate()?;
        Ok(Self {
            model,
            hyper,
            noise,
            labels: vec![0.0; model.labels().len()],
            grad: vec![0.0; model.dim()],
            next_pi: DVector::zeros(model.dim()),
        })
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    /// Advances `state` by one step. On divergence `state` keeps the last
    /// finite point and the error carries a copy of it.
    pub fn step(&mut self, state: &mut OptimizerState, rng: &mut RandomStream) -> Result<()> {
        if state.w.len() != self.model.dim() || state.pi.len() != self.model.dim() {
            return Err(Error::contract("state dimension does not match the model"));
        }
        noisy_labels(self.model.labels(), &self.noise, rng, &mut self.labels);
        self.model
            .gradient_with_labels(state.w.as_slice(), &self.labels, &mut self.grad);
        let HyperParams { eta, beta, .. } = self.hyper;
        let mut pi_sq = 0.0;
        let mut w_sq = 0.0;
        for i in 0..self.grad.len() {
            let p = beta * state.pi[i] - self.grad[i];
            let w = state.w[i] + eta * p;
            self.next_pi[i] = p;
            pi_sq += p * p;
            w_sq += w * w;
        }
        if !(pi_sq.is_finite() && w_sq.is_finite())
            || pi_sq > DIVERGENCE_LIMIT
            || w_sq > DIVERGENCE_LIMIT
        {
            return Err(Error::Divergence {
                last_finite: Box::new(state.snapshot()),
            });
        }
        state.w.axpy(eta, &self.next_pi, 1.0);
        std::mem::swap(&mut state.pi, &mut self.next_pi);
        state.k += 1;
        Ok(())
    }
}

/// One heavy-ball step from `state`.
pub fn sgdm_step<M: Model + ?Sized>(
    state: &OptimizerState,
    model: &M,
    noise: &NoiseMap,
    hyper: &HyperParams,
    rng: &mut RandomStream,
) -> Result<OptimizerState> {
    let mut next = state.clone();
    Sgdm::new(model, *hyper, *noise)?.step(&mut next, rng)?;
    Ok(next)
}

/// Scalar tracked by a stopping criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Loss,
    /// `‖w‖²`, which is `|u|² + |v|²` for the UV model.
    WeightNormSq,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_steps: u64,
    /// Stop once the observable drops below the threshold.
    pub below: Option<(Observable, f64)>,
}

impl StopRule {
    pub fn max_steps(max_steps: u64) -> Self {
        Self {
            max_steps,
            below: None,
        }
    }

    pub fn observable_below(observable: Observable, threshold: f64, max_steps: u64) -> Self {
        Self {
            max_steps,
            below: Some((observable, threshold)),
        }
    }
}

/// One recorded row of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub step: u64,
    pub loss: f64,
    pub weight_norm_sq: f64,
    pub momentum_norm_sq: f64,
    pub trace_hessian: Option<f64>,
    pub test_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// The stopping criterion fired.
    Criterion,
    MaxSteps,
    Diverged(Box<PhasePoint>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub termination: Termination,
    pub final_state: OptimizerState,
}

impl TrajectoryRecord {
    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged(_))
    }

    /// The record, or a divergence error if the run blew up.
    pub fn into_result(self) -> Result<Self> {
        match self.termination {
            Termination::Diverged(p) => Err(Error::Divergence { last_finite: p }),
            _ => Ok(self),
        }
    }

    /// `(step, ‖w‖²)` pairs.
    pub fn weight_norm_series(&self) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .map(|s| (s.step as f64, s.weight_norm_sq))
            .collect()
    }
}

/// Which optional observables to record.
#[derive(Default)]
pub struct Recorder<'a> {
    pub trace_hessian: bool,
    pub test_error: Option<&'a (dyn Fn(&[f64]) -> f64 + Sync)>,
}

impl Recorder<'_> {
    fn sample<M: Model + ?Sized>(&self, model: &M, state: &OptimizerState) -> TrajectorySample {
        TrajectorySample {
            step: state.k,
            loss: model.loss_with_labels(state.w.as_slice(), model.labels()),
            weight_norm_sq: state.w.norm_squared(),
            momentum_norm_sq: state.pi.norm_squared(),
            trace_hessian: self
                .trace_hessian
                .then(|| model.trace_hessian(&state.w).unwrap_or(f64::NAN)),
            test_error: self.test_error.map(|f| f(state.w.as_slice())),
        }
    }
}

/// Runs SGDM from `init` until the stop rule fires or the step budget is
/// spent, sampling observables every `record_every` steps (and at the end).
pub fn run_trajectory<M: Model + ?Sized>(
    model: &M,
    noise: &NoiseMap,
    hyper: &HyperParams,
    init: OptimizerState,
    stop: StopRule,
    record_every: u64,
    recorder: &Recorder<'_>,
    rng: &mut RandomStream,
) -> Result<TrajectoryRecord> {
    if record_every == 0 {
        return Err(Error::contract("record_every must be positive"));
    }
    model.check_dim(init.w.as_slice())?;
    let mut stepper = Sgdm::new(model, *hyper, *noise)?;
    let mut state = init;
    let start = state.k;
    let mut samples = vec![recorder.sample(model, &state)];
    let termination = loop {
        if let Some((obs, threshold)) = stop.below {
            let value = match obs {
                Observable::WeightNormSq => state.w.norm_squared(),
                Observable::Loss => {
                    if (state.k - start) % record_every == 0 {
                        samples.last().map(|s| s.loss).unwrap_or(f64::INFINITY)
                    } else {
                        f64::INFINITY
                    }
                }
            };
            if value < threshold {
                break Termination::Criterion;
            }
        }
        if state.k - start >= stop.max_steps {
            break Termination::MaxSteps;
        }
        if let Err(e) = stepper.step(&mut state, rng) {
            match e {
                Error::Divergence { last_finite } => break Termination::Diverged(last_finite),
                other => return Err(other),
            }
        }
        if (state.k - start) % record_every == 0 {
            let s = recorder.sample(model, &state);
            if !s.loss.is_finite() || s.loss > DIVERGENCE_LIMIT {
                break Termination::Diverged(Box::new(state.snapshot()));
            }
            samples.push(s);
        }
    };
    if samples.last().map(|s| s.step) != Some(state.k) {
        samples.push(recorder.sample(model, &state));
    }
    Ok(TrajectoryRecord {
        samples,
        termination,
        final_state: state,
    })
}

/// Settings for [`project_to_manifold`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOptions {
    pub beta: f64,
    /// Fixed learning rate; `None` uses `0.1 · 2(1 + β) / λ_max` at the start point.
    pub eta: Option<f64>,
    pub max_steps: u64,
    /// Start from this momentum instead of rest (the full-state limit map).
    pub momentum: Option<DVector<f64>>,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            beta: 0.9,
            eta: None,
            max_steps: 1_000_000,
            momentum: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w: DVector<f64>,
    pub steps: u64,
    pub loss: f64,
}

/// Largest Hessian eigenvalue by power iteration on finite-difference
/// Hessian-vector products.
pub fn top_hessian_eigenvalue<M: Model + ?Sized>(model: &M, w: &DVector<f64>) -> Result<f64> {
    let d = model.dim();
    let g0 = model.gradient(w)?;
    let h = 1e-5 * (1.0 + w.norm());
    let mut v = DVector::from_fn(d, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..100 {
        let hv = (model.gradient(&(w + &v * h))? - &g0) / h;
        let next = hv.dot(&v);
        let n = hv.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v = hv / n;
        if (next - lambda).abs() <= 1e-6 * next.abs() {
            return Ok(next.max(0.0));
        }
        lambda = next;
    }
    Ok(lambda.max(0.0))
}

/// Noiseless heavy-ball descent from `w` until the loss drops below `tol`.
pub fn project_to_manifold<M: Model + ?Sized>(
    model: &M,
    w: &DVector<f64>,
    tol: f64,
    options: &ProjectionOptions,
) -> Result<Projection> {
    model.check_dim(w.as_slice())?;
    let mut loss = model.loss(w)?;
    let rest = options.momentum.as_ref().map_or(true, |p| p.norm() == 0.0);
    if loss < tol && rest {
        return Ok(Projection {
            w: w.clone(),
            steps: 0,
            loss,
        });
    }
    let eta = match options.eta {
        Some(eta) => eta,
        None => {
            let top = top_hessian_eigenvalue(model, w)?;
            if top <= 0.0 {
                return Err(Error::ProjectionFailure { steps: 0, loss });
            }
            0.1 * 2.0 * (1.0 + options.beta) / top
        }
    };
    let hyper = HyperParams::explicit(eta, options.beta)?;
    let mut stepper = Sgdm::new(model, hyper, NoiseMap::none())?;
    let mut state = OptimizerState {
        pi: options.momentum.clone().unwrap_or_else(|| DVector::zeros(w.len())),
        w: w.clone(),
        k: 0,
    };
    // no randomness is consumed by silent noise
    let mut rng = RandomStream::new(0, 0);
    let mut settled = 0;
    while state.k < options.max_steps {
        stepper.step(&mut state, &mut rng).map_err(|_| Error::ProjectionFailure {
            steps: state.k as usize,
            loss,
        })?;
        loss = model.loss(&state.w)?;
        // keep going until the residual momentum no longer moves w either
        if loss < tol {
            settled += 1;
            if rest && settled >= 1 || state.pi.norm() * eta < tol.sqrt() {
                return Ok(Projection {
                    w: state.w,
                    steps: state.k,
                    loss,
                });
            }
        }
    }
    Err(Error::ProjectionFailure {
        steps: state.k as usize,
        loss,
    })
}
