//! Mean SGDM motion along the manifold against the predicted label-noise
//! drift, for the vector UV model.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use sgdm_core::analysis::fit_line;
use sgdm_core::drift::{integrate_drift, label_noise_drift, DriftMode, DriftParams, IntegrationOptions, ManifoldChart};
use sgdm_core::models::{generate_uv, Model, NoiseMap, UvSpec, VectorUvModel};
use sgdm_core::numerics::{RandomStream, DEFAULT_RANK_TOL};
use sgdm_core::optimizer::{project_to_manifold, HyperParams, OptimizerState, ProjectionOptions, Sgdm};
use sgdm_core::Error as CoreError;

use super::{write, Outcome, RunOptions, RunRecord};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::sweep::{coords, run_cells, stream_index, CellStatus};
use crate::table::{fmt_f64, fmt_opt, Table};

pub const KIND: &str = "drift-compare";

pub const PATH_COLUMNS: [&str; 5] = ["path", "stream", "status", "steps", "message"];

pub const SCALING_COLUMNS: [&str; 4] = ["eta", "drift_norm", "exponent", "theory_exponent"];

/// Loss below which a projected point counts as on the manifold.
const MANIFOLD_TOL: f64 = 1e-14;

pub struct DriftSetup {
    pub model: VectorUvModel,
    /// Start point with `u ⟂ v`, exactly on the manifold.
    pub start: DVector<f64>,
    pub params: DriftParams,
    pub hyper: HyperParams,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<DriftSetup> {
    let d = &cfg.drift;
    let data = generate_uv(
        &UvSpec { p: d.samples },
        &mut RandomStream::new(cfg.seed, stream_index(&format!("{KIND}/data"))),
    )?;
    let model = VectorUvModel::from_data(d.n, &data)?;
    let mut rng = RandomStream::new(cfg.seed, stream_index(&format!("{KIND}/init")));
    let u = DVector::from_vec(rng.gaussians(d.n));
    let mut v = DVector::from_vec(rng.gaussians(d.n));
    v -= &u * (u.dot(&v) / u.norm_squared());
    let mut start = DVector::zeros(2 * d.n);
    start.rows_mut(0, d.n).copy_from(&u);
    start.rows_mut(d.n, d.n).copy_from(&v);
    Ok(DriftSetup {
        model,
        start,
        params: DriftParams {
            eta: d.eta,
            gamma: d.gamma,
            c: d.c,
            epsilon: d.epsilon,
        },
        hyper: HyperParams::scaled(d.eta, d.gamma, d.c)?,
    })
}

/// Checkpoint times, evenly spaced up to the step budget.
pub fn checkpoints(cfg: &ExperimentConfig) -> Vec<u64> {
    let d = &cfg.drift;
    (1..=d.checkpoints as u64).map(|j| j * d.steps / d.checkpoints as u64).collect()
}

pub struct PathResult {
    pub path: usize,
    pub key: String,
    pub stream: u64,
    pub status: CellStatus,
    pub steps: u64,
    /// Limit point of the full state at every checkpoint.
    pub limits: Vec<DVector<f64>>,
    pub message: String,
    pub wall_clock: Duration,
}

fn run_path(cfg: &ExperimentConfig, s: &DriftSetup, path: usize) -> PathResult {
    let start = Instant::now();
    let d = &cfg.drift;
    let key = coords(KIND, &[("c", d.c), ("gamma", d.gamma), ("eta", d.eta)], path);
    let stream = stream_index(&key);
    let mut r = PathResult {
        path,
        key,
        stream,
        status: CellStatus::Failed,
        steps: 0,
        limits: Vec::new(),
        message: String::new(),
        wall_clock: Duration::ZERO,
    };
    let mut rng = RandomStream::new(cfg.seed, stream);
    let outcome = (|| -> sgdm_core::Result<()> {
        let mut stepper = Sgdm::new(&s.model, s.hyper, NoiseMap::gaussian(d.epsilon))?;
        let mut state = OptimizerState::at_rest(s.start.clone());
        for t in checkpoints(cfg) {
            while state.k < t {
                stepper.step(&mut state, &mut rng)?;
            }
            let limit = project_to_manifold(
                &s.model,
                &state.w,
                MANIFOLD_TOL,
                &ProjectionOptions {
                    beta: s.hyper.beta,
                    eta: Some(s.hyper.eta),
                    max_steps: 1_000_000,
                    momentum: Some(state.pi.clone()),
                },
            )?;
            r.limits.push(limit.w);
        }
        r.steps = state.k;
        Ok(())
    })();
    match outcome {
        Ok(()) => r.status = CellStatus::Completed,
        Err(CoreError::Divergence { last_finite }) => {
            r.status = CellStatus::Diverged;
            r.steps = last_finite.step;
            r.message = format!("diverged at step {}", last_finite.step);
        }
        Err(e) => r.message = e.to_string(),
    }
    r.wall_clock = start.elapsed();
    r
}

pub fn run_paths(cfg: &ExperimentConfig, s: &DriftSetup, parallelism: usize) -> Result<Vec<PathResult>> {
    let paths: Vec<usize> = (0..cfg.drift.paths).collect();
    run_cells(&paths, parallelism, |&p| run_path(cfg, s, p))
}

/// Deterministic drift flow from the start point, sampled at the checkpoints.
pub fn predict(cfg: &ExperimentConfig, s: &DriftSetup) -> Result<Vec<DVector<f64>>> {
    let mut w = s.start.clone();
    let mut t_prev = 0;
    let mut out = Vec::new();
    for t in checkpoints(cfg) {
        let segment = (t - t_prev) as f64;
        let mut opts = IntegrationOptions::new(segment, DriftMode::LabelNoise { c: s.model.noise_scale() });
        opts.diffusion = false;
        opts.dt = segment / 20.0;
        opts.manifold_tol = MANIFOLD_TOL;
        let path = integrate_drift(&s.model, &w, &s.params, &opts, &mut RandomStream::new(cfg.seed, 0))?;
        w = path.points.last().cloned().unwrap_or(w);
        out.push(w.clone());
        t_prev = t;
    }
    Ok(out)
}

/// One row per checkpoint comparing mean simulated and predicted displacement.
pub struct Comparison {
    pub table: Table,
    /// Relative displacement error at each checkpoint.
    pub errors: Vec<f64>,
}

pub fn compare(cfg: &ExperimentConfig, s: &DriftSetup, sims: &[PathResult], pred: &[DVector<f64>]) -> Comparison {
    let dim = s.start.len();
    let mut header = vec![
        "t".to_string(),
        "paths".into(),
        "sim_displacement".into(),
        "pred_displacement".into(),
        "relative_error".into(),
    ];
    header.extend((0..dim).map(|i| format!("sim_{i}")));
    header.extend((0..dim).map(|i| format!("pred_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header);
    let done: Vec<&PathResult> = sims.iter().filter(|r| r.status == CellStatus::Completed).collect();
    let mut errors = Vec::new();
    for (j, t) in checkpoints(cfg).into_iter().enumerate() {
        let mean = if done.is_empty() {
            None
        } else {
            let sum = done.iter().fold(DVector::zeros(dim), |acc, r| acc + &r.limits[j]);
            Some(sum / done.len() as f64)
        };
        let pred_disp = &pred[j] - &s.start;
        let err = mean.as_ref().map(|m| (m - &pred[j]).norm() / pred_disp.norm());
        if let Some(e) = err {
            errors.push(e);
        }
        let mut row = vec![
            t.to_string(),
            done.len().to_string(),
            fmt_opt(mean.as_ref().map(|m| (m - &s.start).norm())),
            fmt_f64(pred_disp.norm()),
            fmt_opt(err),
        ];
        match &mean {
            Some(m) => row.extend(m.iter().map(|&x| fmt_f64(x))),
            None => row.extend((0..dim).map(|_| String::new())),
        }
        row.extend(pred[j].iter().map(|&x| fmt_f64(x)));
        table.push(row);
    }
    Comparison { table, errors }
}

/// `‖drift‖` at the start point over `etas`, and the fitted log-log slope.
pub fn scaling(cfg: &ExperimentConfig, s: &DriftSetup) -> Result<(Table, Option<f64>)> {
    let chart = ManifoldChart::at(&s.model, &s.start, DEFAULT_RANK_TOL)?;
    let mut points = Vec::new();
    for &eta in &cfg.drift.scaling_etas {
        let params = DriftParams { eta, ..s.params };
        let f = label_noise_drift(&s.model, &chart, s.model.noise_scale(), &params)?;
        points.push((eta, f.drift.norm()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(e, n)| (e.ln(), n.ln())).collect();
    let slope = fit_line(&logs).ok().map(|l| l.slope);
    let theory = 2.0 - 2.0 * cfg.drift.gamma;
    let mut t = Table::new(&SCALING_COLUMNS);
    for (eta, norm) in points {
        t.push(vec![fmt_f64(eta), fmt_f64(norm), fmt_opt(slope), fmt_f64(theory)]);
    }
    Ok((t, slope))
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let out: &Path = &opts.out;
    let s = setup(cfg)?;
    let mut files = Vec::new();
    let sims = run_paths(cfg, &s, opts.parallelism)?;
    let mut paths = Table::new(&PATH_COLUMNS);
    for r in &sims {
        paths.push(vec![
            r.path.to_string(),
            r.stream.to_string(),
            r.status.to_string(),
            r.steps.to_string(),
            r.message.clone(),
        ]);
    }
    write(&paths, out, "paths.csv", &mut files)?;
    let pred = predict(cfg, &s)?;
    write(&compare(cfg, &s, &sims, &pred).table, out, "drift.csv", &mut files)?;
    write(&scaling(cfg, &s)?.0, out, "drift_scaling.csv", &mut files)?;

    let hash = cfg.hash();
    let records = sims
        .iter()
        .map(|r| RunRecord {
            config_hash: hash.clone(),
            seed: cfg.seed,
            stream: r.stream,
            cell: r.key.clone(),
            status: r.status,
            outputs: vec!["paths.csv".into(), "drift.csv".into()],
            wall_clock: r.wall_clock,
            message: r.message.clone(),
        })
        .collect();
    Ok(Outcome { records, files })
}
