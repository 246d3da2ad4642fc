//! Convergence timescale of the vector UV model across `(γ, η)` under the
//! momentum scaling `β = 1 - C η^γ`.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use sgdm_core::analysis::{
    fit_exponential, fit_powerlaw, joint_fit_c, FitWindow, GammaSweep, JointFit, PowerLawFit,
};
use sgdm_core::models::{generate_uv, MlpModel, Model, NoiseMap, UvData, UvSpec, VectorUvModel};
use sgdm_core::numerics::RandomStream;
use sgdm_core::optimizer::{
    run_trajectory, HyperParams, Observable, OptimizerState, Recorder, StopRule, Termination,
    TrajectoryRecord,
};

use super::{median, write, Outcome, RunOptions, RunRecord};
use crate::config::{ActivationKind, ExperimentConfig};
use crate::error::Result;
use crate::plot;
use crate::sweep::{coords, run_cells, stream_index, CellStatus};
use crate::table::{fmt_f64, fmt_opt, trajectory_rows, Table, TRAJECTORY_COLUMNS};

pub const KIND: &str = "uv-timescale";

pub const CELL_COLUMNS: [&str; 12] = [
    "gamma", "c", "eta", "beta", "replicate", "stream", "status", "termination", "steps", "t_c",
    "r_squared", "message",
];

pub const SWEEP_COLUMNS: [&str; 11] = [
    "gamma", "C", "eta", "T_c", "r_squared", "alpha", "T0", "beta_star", "T_c_min", "T_c_max",
    "fits",
];

pub const SUMMARY_COLUMNS: [&str; 6] = ["gamma", "C", "alpha", "T0", "residual", "theory_alpha"];

/// `max(2(1 - γ), γ)`: the slower of the drift and equilibration exponents.
pub fn theory_alpha(gamma: f64) -> f64 {
    (2.0 * (1.0 - gamma)).max(gamma)
}

/// Dataset, model and the shared initialization.
pub struct UvSetup {
    pub data: UvData,
    pub model: Box<dyn Model>,
    pub init: DVector<f64>,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<UvSetup> {
    let u = &cfg.uv;
    let mut data_rng = RandomStream::new(cfg.seed, stream_index(&format!("{KIND}/data")));
    let data = generate_uv(&UvSpec { p: u.samples }, &mut data_rng)?;
    let model: Box<dyn Model> = match u.activation {
        ActivationKind::Linear => Box::new(VectorUvModel::from_data(u.n, &data)?),
        act => Box::new(MlpModel::new(
            vec![1, u.n, 1],
            act.into(),
            data.inputs.clone(),
            data.labels.clone(),
        )?),
    };
    let mut init_rng = RandomStream::new(cfg.seed, stream_index(&format!("{KIND}/init")));
    let init = DVector::from_vec(init_rng.gaussians(2 * u.n));
    Ok(UvSetup { data, model, init })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UvCell {
    pub gamma: f64,
    pub eta: f64,
    pub replicate: usize,
}

#[derive(Debug, Clone)]
pub struct UvCellResult {
    pub cell: UvCell,
    pub c: f64,
    pub beta: f64,
    pub key: String,
    pub stream: u64,
    pub status: CellStatus,
    pub termination: &'static str,
    pub steps: u64,
    pub t_c: Option<f64>,
    pub r_squared: Option<f64>,
    pub message: String,
    pub trajectory: Option<TrajectoryRecord>,
    pub wall_clock: Duration,
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<UvCell> {
    let mut out = Vec::new();
    for &gamma in &cfg.uv.gammas {
        for &eta in &cfg.uv.etas {
            for replicate in 0..cfg.replicates {
                out.push(UvCell {
                    gamma,
                    eta,
                    replicate,
                });
            }
        }
    }
    out
}

fn run_one(cfg: &ExperimentConfig, setup: &UvSetup, c: f64, cell: UvCell, keep: bool) -> UvCellResult {
    let start = Instant::now();
    let u = &cfg.uv;
    // the noise stream ignores `c`, so sweeps at different prefactors share noise
    let noise_key = coords(KIND, &[("gamma", cell.gamma), ("eta", cell.eta)], cell.replicate);
    let stream = stream_index(&noise_key);
    let key = coords(KIND, &[("c", c), ("gamma", cell.gamma), ("eta", cell.eta)], cell.replicate);
    let mut result = UvCellResult {
        cell,
        c,
        beta: f64::NAN,
        key,
        stream,
        status: CellStatus::Failed,
        termination: "",
        steps: 0,
        t_c: None,
        r_squared: None,
        message: String::new(),
        trajectory: None,
        wall_clock: Duration::ZERO,
    };
    let hyper = match HyperParams::scaled(cell.eta, cell.gamma, c) {
        Ok(h) => h,
        Err(e) => {
            result.message = e.to_string();
            return result;
        }
    };
    result.beta = hyper.beta;
    let stop = StopRule::observable_below(Observable::WeightNormSq, u.stop_fraction * u.n as f64, u.max_steps);
    let mut rng = RandomStream::new(cfg.seed, stream);
    let record = run_trajectory(
        setup.model.as_ref(),
        &NoiseMap::gaussian(u.epsilon),
        &hyper,
        OptimizerState::at_rest(setup.init.clone()),
        stop,
        u.record_every,
        &Recorder::default(),
        &mut rng,
    );
    let record = match record {
        Ok(r) => r,
        Err(e) => {
            result.message = e.to_string();
            result.wall_clock = start.elapsed();
            return result;
        }
    };
    result.steps = record.final_state.k;
    result.termination = match record.termination {
        Termination::Criterion => "criterion",
        Termination::MaxSteps => "max-steps",
        Termination::Diverged(_) => "diverged",
    };
    if record.diverged() {
        result.status = CellStatus::Diverged;
        result.message = format!("diverged at step {}", record.final_state.k);
    } else {
        match fit_exponential(&record.weight_norm_series(), FitWindow::default()) {
            Ok(fit) => {
                result.status = CellStatus::Completed;
                result.t_c = Some(fit.t_c);
                result.r_squared = Some(fit.r_squared);
            }
            Err(e) => result.message = e.to_string(),
        }
    }
    if keep {
        result.trajectory = Some(record);
    }
    result.wall_clock = start.elapsed();
    result
}

/// Runs every `(γ, η, replicate)` cell at prefactor `c`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    setup: &UvSetup,
    c: f64,
    parallelism: usize,
    keep_trajectories: bool,
) -> Result<Vec<UvCellResult>> {
    let cells = cells(cfg);
    run_cells(&cells, parallelism, |&cell| run_one(cfg, setup, c, cell, keep_trajectories))
}

pub fn cells_table(results: &[UvCellResult]) -> Table {
    let mut t = Table::new(&CELL_COLUMNS);
    for r in results {
        t.push(vec![
            fmt_f64(r.cell.gamma),
            fmt_f64(r.c),
            fmt_f64(r.cell.eta),
            fmt_f64(r.beta),
            r.cell.replicate.to_string(),
            r.stream.to_string(),
            r.status.to_string(),
            r.termination.to_string(),
            r.steps.to_string(),
            fmt_opt(r.t_c),
            fmt_opt(r.r_squared),
            r.message.clone(),
        ]);
    }
    t
}

/// Fits derived from a cells table.
#[derive(Debug, Clone)]
pub struct UvFit {
    pub sweep: Table,
    pub summary: Table,
    /// Median `T_c` per `η`, one entry per `(γ, C)`.
    pub sweeps: Vec<GammaSweep>,
    /// `(γ, C, fit)` for every group with enough points.
    pub power_laws: Vec<(f64, f64, PowerLawFit)>,
}

struct Group {
    gamma: f64,
    c: f64,
    etas: Vec<(f64, Vec<(f64, f64)>)>,
}

/// Median timescales per `(γ, C, η)` and a power law per `(γ, C)`.
pub fn fit(cells: &Table) -> Result<UvFit> {
    cells.require(&CELL_COLUMNS)?;
    let mut groups: Vec<Group> = Vec::new();
    for row in &cells.rows {
        let gamma = cells.get_f64(row, "gamma")?.unwrap_or(f64::NAN);
        let c = cells.get_f64(row, "c")?.unwrap_or(f64::NAN);
        let eta = cells.get_f64(row, "eta")?.unwrap_or(f64::NAN);
        let g = match groups.iter().position(|g| g.gamma == gamma && g.c == c) {
            Some(i) => &mut groups[i],
            None => {
                groups.push(Group {
                    gamma,
                    c,
                    etas: Vec::new(),
                });
                groups.last_mut().unwrap()
            }
        };
        let slot = match g.etas.iter().position(|e| e.0 == eta) {
            Some(i) => &mut g.etas[i].1,
            None => {
                g.etas.push((eta, Vec::new()));
                &mut g.etas.last_mut().unwrap().1
            }
        };
        if cells.get(row, "status")? == "completed" {
            if let (Some(tc), Some(r2)) = (cells.get_f64(row, "t_c")?, cells.get_f64(row, "r_squared")?) {
                slot.push((tc, r2));
            }
        }
    }

    let mut sweep = Table::new(&SWEEP_COLUMNS);
    let mut summary = Table::new(&SUMMARY_COLUMNS);
    let mut sweeps = Vec::new();
    let mut power_laws = Vec::new();
    for g in &groups {
        let mut medians = Vec::new();
        let mut per_eta = Vec::new();
        for (eta, fits) in &g.etas {
            let mut tcs: Vec<f64> = fits.iter().map(|f| f.0).collect();
            let mut r2s: Vec<f64> = fits.iter().map(|f| f.1).collect();
            let tc = median(&mut tcs);
            if let Some(tc) = tc {
                medians.push((*eta, tc));
            }
            per_eta.push((*eta, tc, median(&mut r2s), tcs.first().copied(), tcs.last().copied(), fits.len()));
        }
        let law = fit_powerlaw(&medians).ok();
        if let Some(l) = law {
            power_laws.push((g.gamma, g.c, l));
            summary.push(vec![
                fmt_f64(g.gamma),
                fmt_f64(g.c),
                fmt_f64(l.alpha),
                fmt_f64(l.t0),
                fmt_f64(l.residual),
                fmt_f64(theory_alpha(g.gamma)),
            ]);
        }
        for (eta, tc, r2, lo, hi, n) in per_eta {
            sweep.push(vec![
                fmt_f64(g.gamma),
                fmt_f64(g.c),
                fmt_f64(eta),
                fmt_opt(tc),
                fmt_opt(r2),
                fmt_opt(law.map(|l| l.alpha)),
                fmt_opt(law.map(|l| l.t0)),
                String::new(),
                fmt_opt(lo),
                fmt_opt(hi),
                n.to_string(),
            ]);
        }
        sweeps.push(GammaSweep {
            gamma: g.gamma,
            points: medians,
        });
    }
    Ok(UvFit {
        sweep,
        summary,
        sweeps,
        power_laws,
    })
}

/// Finds the prefactor `C` that makes the fitted `T₀` most nearly shared across `γ`.
pub fn joint_fit(cfg: &ExperimentConfig, setup: &UvSetup, parallelism: usize) -> Result<JointFit> {
    let jf = &cfg.uv.joint_fit;
    let mut failure = None;
    let fit = joint_fit_c(&jf.grid, jf.refine_iterations, |c| {
        let results = run_sweep(cfg, setup, c, parallelism, false).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            sgdm_core::Error::InsufficientData(msg)
        })?;
        let fitted = fit(&cells_table(&results)).map_err(|e| sgdm_core::Error::InsufficientData(e.to_string()))?;
        Ok(fitted.sweeps)
    });
    match (fit, failure) {
        (_, Some(e)) => Err(e),
        (Ok(f), None) => Ok(f),
        (Err(e), None) => Err(e.into()),
    }
}

pub fn joint_fit_table(fit: &JointFit) -> Table {
    let mut t = Table::new(&["c", "spread", "selected", "ambiguous"]);
    let mut profile = fit.profile.clone();
    profile.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (c, s) in profile {
        t.push(vec![
            fmt_f64(c),
            fmt_f64(s),
            (c == fit.c).to_string(),
            fit.ambiguous.to_string(),
        ]);
    }
    t
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let out: &Path = &opts.out;
    let hash = cfg.hash();
    let setup = setup(cfg)?;
    let mut files = Vec::new();
    let data_path = out.join("dataset.csv");
    crate::table::write_uv_dataset(&data_path, &setup.data)?;
    files.push(data_path);

    let keep = cfg.uv.save_trajectories;
    let results = run_sweep(cfg, &setup, cfg.uv.c, opts.parallelism, keep)?;
    write(&cells_table(&results), out, "cells.csv", &mut files)?;
    let mut outputs = vec!["cells.csv".to_string()];
    if keep {
        let mut header: Vec<&str> = vec!["gamma", "eta", "replicate"];
        header.extend(TRAJECTORY_COLUMNS);
        let mut t = Table::new(&header);
        for r in &results {
            if let Some(rec) = &r.trajectory {
                let prefix = [fmt_f64(r.cell.gamma), fmt_f64(r.cell.eta), r.cell.replicate.to_string()];
                t.rows.extend(trajectory_rows(&prefix, rec));
            }
        }
        write(&t, out, "trajectories.csv", &mut files)?;
        outputs.push("trajectories.csv".into());
    }

    let fitted = fit(&Table::read(&out.join("cells.csv"))?)?;
    write(&fitted.sweep, out, "sweep.csv", &mut files)?;
    write(&fitted.summary, out, "summary.csv", &mut files)?;
    plot::write_svg(&out.join("alpha.svg"), &plot::render(plot::PlotKind::Alpha, &Table::read(&out.join("summary.csv"))?)?, &mut files)?;
    plot::write_svg(&out.join("timescales.svg"), &plot::render(plot::PlotKind::Timescales, &Table::read(&out.join("sweep.csv"))?)?, &mut files)?;

    if cfg.uv.joint_fit.enabled {
        let jf = joint_fit(cfg, &setup, opts.parallelism)?;
        write(&joint_fit_table(&jf), out, "joint_fit.csv", &mut files)?;
    }

    let records = results
        .iter()
        .map(|r| RunRecord {
            config_hash: hash.clone(),
            seed: cfg.seed,
            stream: r.stream,
            cell: r.key.clone(),
            status: r.status,
            outputs: outputs.clone(),
            wall_clock: r.wall_clock,
            message: r.message.clone(),
        })
        .collect();
    Ok(Outcome { records, files })
}
