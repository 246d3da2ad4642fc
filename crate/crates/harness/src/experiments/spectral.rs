//! Linearized SGDM spectrum at a point on the zero-loss manifold.

use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use sgdm_core::models::{MatrixSensingModel, Model};
use sgdm_core::numerics::sym_eigendecomposition;
use sgdm_core::optimizer::{beta_from_scaling, project_to_manifold, ProjectionOptions, Scaling};
use sgdm_core::spectral::{rho_bounds, SpectralReport};

use super::{write, Outcome, RunOptions, RunRecord};
use crate::config::{ExperimentConfig, SpectralModel};
use crate::error::{HarnessError, Result};
use crate::sweep::{coords, stream_index, CellStatus};
use crate::table::{fmt_f64, fmt_opt, Table};

pub const KIND: &str = "spectral-report";

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "model", "eta", "beta", "rho1", "rho2", "predicted_rho1", "predicted_rho2", "tau1", "c1", "c2",
    "stable", "projection_steps",
];

pub struct SpectralResult {
    pub report: SpectralReport,
    pub beta: f64,
    pub point: DVector<f64>,
    pub projection_steps: u64,
    pub predicted: Option<(f64, f64)>,
}

fn model_and_start(cfg: &ExperimentConfig) -> Result<(Box<dyn Model>, DVector<f64>)> {
    Ok(match cfg.spectral.model {
        SpectralModel::Uv => {
            let s = super::uv::setup(cfg)?;
            (s.model, s.init)
        }
        SpectralModel::Sensing => {
            let m = MatrixSensingModel::from_data(&super::sensing::dataset(cfg)?)?;
            let w = m.identity_init();
            (Box::new(m), w)
        }
    })
}

pub fn compute(cfg: &ExperimentConfig) -> Result<SpectralResult> {
    let sp = &cfg.spectral;
    let (model, start) = model_and_start(cfg)?;
    let (beta, scaling) = match sp.beta {
        Some(b) => (b, None),
        None => (
            beta_from_scaling(sp.eta, sp.gamma, sp.c)?,
            Some(Scaling { gamma: sp.gamma, c: sp.c }),
        ),
    };
    let proj = project_to_manifold(model.as_ref(), &start, sp.projection_tol, &ProjectionOptions::default())?;
    let h = model.hessian(&proj.w)?;
    let report = SpectralReport::from_hessian(&h, sp.eta, beta)?;
    let predicted = if report.stable {
        let eig = sym_eigendecomposition(&h)?;
        rho_bounds(eig.eigenvalues.as_slice(), sp.eta, beta, scaling)?.predicted
    } else {
        None
    };
    Ok(SpectralResult {
        report,
        beta,
        point: proj.w,
        projection_steps: proj.steps,
        predicted,
    })
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let out: &Path = &opts.out;
    let start = Instant::now();
    let model_name = match cfg.spectral.model {
        SpectralModel::Uv => "uv",
        SpectralModel::Sensing => "sensing",
    };
    let key = coords(&format!("{KIND}/model={model_name}"), &[("eta", cfg.spectral.eta)], 0);
    let mut record = RunRecord {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        stream: stream_index(&key),
        cell: key,
        status: CellStatus::Failed,
        outputs: Vec::new(),
        wall_clock: start.elapsed(),
        message: String::new(),
    };
    let mut files = Vec::new();
    match compute(cfg) {
        Err(HarnessError::Core(e)) => record.message = e.to_string(),
        Err(e) => return Err(e),
        Ok(r) => {
            let path = out.join("spectral.csv");
            let mut buf = Vec::new();
            r.report.write_csv(&mut buf).map_err(|e| HarnessError::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| HarnessError::io(&path, e))?;
            files.push(path);

            let mut summary = Table::new(&SUMMARY_COLUMNS);
            summary.push(vec![
                model_name.to_string(),
                fmt_f64(cfg.spectral.eta),
                fmt_f64(r.beta),
                fmt_f64(r.report.rho1),
                fmt_f64(r.report.rho2),
                fmt_opt(r.predicted.map(|p| p.0)),
                fmt_opt(r.predicted.map(|p| p.1)),
                fmt_f64(r.report.tau1),
                fmt_f64(r.report.c1),
                fmt_f64(r.report.c2),
                r.report.stable.to_string(),
                r.projection_steps.to_string(),
            ]);
            write(&summary, out, "summary.csv", &mut files)?;
            record.outputs = vec!["spectral.csv".into(), "summary.csv".into()];
            if r.report.stable {
                record.status = CellStatus::Completed;
            } else {
                record.status = CellStatus::Diverged;
                record.message = "linearization has unstable modes".into();
            }
        }
    }
    record.wall_clock = start.elapsed();
    Ok(Outcome {
        records: vec![record],
        files,
    })
}
