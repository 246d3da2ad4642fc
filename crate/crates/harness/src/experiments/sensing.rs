//! Matrix sensing with label noise across a momentum grid at fixed `η`:
//! expected test error and Hessian trace along each trajectory.

use std::path::Path;
use std::time::{Duration, Instant};

use sgdm_core::models::{generate_sensing, MatrixSensingModel, Model, NoiseMap, SensingData, SensingSpec};
use sgdm_core::numerics::RandomStream;
use sgdm_core::optimizer::{run_trajectory, HyperParams, OptimizerState, Recorder, StopRule, TrajectoryRecord};

use super::{median, write, Outcome, RunOptions, RunRecord};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::plot;
use crate::sweep::{coords, run_cells, stream_index, CellStatus};
use crate::table::{fmt_f64, fmt_opt, trajectory_rows, Table, TRAJECTORY_COLUMNS};

pub const KIND: &str = "matrix-sensing";

pub const CELL_COLUMNS: [&str; 10] = [
    "beta", "replicate", "stream", "status", "steps", "final_test_error", "final_trace_hessian",
    "initial_trace_hessian", "peak_trace_hessian", "message",
];

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "beta", "test_error", "test_error_min", "test_error_max", "trace_hessian", "trace_hessian_min",
    "trace_hessian_max", "trace_decreases", "completed", "diverged",
];

pub fn dataset(cfg: &ExperimentConfig) -> Result<SensingData> {
    let s = &cfg.sensing;
    let mut rng = RandomStream::new(cfg.seed, stream_index(&format!("{KIND}/data")));
    Ok(generate_sensing(
        &SensingSpec {
            d: s.d,
            r: s.rank,
            p: s.measurements(),
        },
        &mut rng,
    )?)
}

#[derive(Debug, Clone)]
pub struct SensingCellResult {
    pub beta: f64,
    pub replicate: usize,
    pub key: String,
    pub stream: u64,
    pub status: CellStatus,
    pub steps: u64,
    pub final_test_error: Option<f64>,
    pub final_trace: Option<f64>,
    pub initial_trace: Option<f64>,
    pub peak_trace: Option<f64>,
    pub message: String,
    pub trajectory: Option<TrajectoryRecord>,
    pub wall_clock: Duration,
}

/// Mean of the last `fraction` of the values (at least one).
fn tail_mean(xs: &[f64], fraction: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let k = ((xs.len() as f64 * fraction).ceil() as usize).clamp(1, xs.len());
    Some(xs[xs.len() - k..].iter().sum::<f64>() / k as f64)
}

fn run_one(cfg: &ExperimentConfig, model: &MatrixSensingModel, beta: f64, replicate: usize) -> SensingCellResult {
    let start = Instant::now();
    let s = &cfg.sensing;
    let key = coords(KIND, &[("eta", s.eta), ("beta", beta)], replicate);
    let stream = stream_index(&key);
    let mut r = SensingCellResult {
        beta,
        replicate,
        key,
        stream,
        status: CellStatus::Failed,
        steps: 0,
        final_test_error: None,
        final_trace: None,
        initial_trace: None,
        peak_trace: None,
        message: String::new(),
        trajectory: None,
        wall_clock: Duration::ZERO,
    };
    let test_error = |w: &[f64]| model.expected_test_error(w).unwrap_or(f64::NAN);
    let recorder = Recorder {
        trace_hessian: true,
        test_error: Some(&test_error),
    };
    let record = HyperParams::explicit(s.eta, beta).and_then(|hyper| {
        run_trajectory(
            model,
            &NoiseMap::gaussian(s.epsilon_sq.sqrt()),
            &hyper,
            OptimizerState::at_rest(model.identity_init()),
            StopRule::max_steps(s.steps),
            s.record_every,
            &recorder,
            &mut RandomStream::new(cfg.seed, stream),
        )
    });
    match record {
        Err(e) => r.message = e.to_string(),
        Ok(rec) => {
            r.steps = rec.final_state.k;
            if rec.diverged() {
                r.status = CellStatus::Diverged;
                r.message = format!("diverged at step {}", rec.final_state.k);
            } else {
                let errs: Vec<f64> = rec.samples.iter().filter_map(|x| x.test_error).collect();
                let traces: Vec<f64> = rec.samples.iter().filter_map(|x| x.trace_hessian).collect();
                r.final_test_error = tail_mean(&errs, s.final_window);
                r.final_trace = tail_mean(&traces, s.final_window);
                r.initial_trace = traces.first().copied();
                r.peak_trace = traces.iter().copied().reduce(f64::max);
                r.status = CellStatus::Completed;
            }
            r.trajectory = Some(rec);
        }
    }
    r.wall_clock = start.elapsed();
    r
}

pub fn run_sweep(cfg: &ExperimentConfig, model: &MatrixSensingModel, parallelism: usize) -> Result<Vec<SensingCellResult>> {
    let cells: Vec<(f64, usize)> = cfg
        .sensing
        .betas
        .iter()
        .flat_map(|&b| (0..cfg.replicates).map(move |rep| (b, rep)))
        .collect();
    run_cells(&cells, parallelism, |&(b, rep)| run_one(cfg, model, b, rep))
}

pub fn cells_table(results: &[SensingCellResult]) -> Table {
    let mut t = Table::new(&CELL_COLUMNS);
    for r in results {
        t.push(vec![
            fmt_f64(r.beta),
            r.replicate.to_string(),
            r.stream.to_string(),
            r.status.to_string(),
            r.steps.to_string(),
            fmt_opt(r.final_test_error),
            fmt_opt(r.final_trace),
            fmt_opt(r.initial_trace),
            fmt_opt(r.peak_trace),
            r.message.clone(),
        ]);
    }
    t
}

/// Per-β medians and the shape of the final-value curves.
#[derive(Debug, Clone)]
pub struct SensingFit {
    pub summary: Table,
    /// `(β, median final test error, median final trace)` for β with completed runs, sorted by β.
    pub finals: Vec<(f64, f64, f64)>,
    /// β minimizing the final test error / final trace.
    pub best_test: Option<f64>,
    pub best_trace: Option<f64>,
    /// Every completed run ended below its peak trace.
    pub all_traces_decrease: bool,
}

/// Neither non-increasing nor non-decreasing.
pub fn non_monotonic(ys: &[f64]) -> bool {
    let up = ys.windows(2).any(|w| w[1] > w[0]);
    let down = ys.windows(2).any(|w| w[1] < w[0]);
    up && down
}

/// The minimizer is neither the first nor the last entry.
pub fn interior_minimum(ys: &[f64]) -> bool {
    match ys.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
        Some((i, _)) => i > 0 && i + 1 < ys.len(),
        None => false,
    }
}

impl SensingFit {
    pub fn test_errors(&self) -> Vec<f64> {
        self.finals.iter().map(|f| f.1).collect()
    }

    pub fn traces(&self) -> Vec<f64> {
        self.finals.iter().map(|f| f.2).collect()
    }
}

pub fn fit(cells: &Table) -> Result<SensingFit> {
    cells.require(&CELL_COLUMNS)?;
    let mut betas: Vec<f64> = Vec::new();
    for row in &cells.rows {
        let b = cells.get_f64(row, "beta")?.unwrap_or(f64::NAN);
        if !betas.contains(&b) {
            betas.push(b);
        }
    }
    betas.sort_by(f64::total_cmp);
    let mut summary = Table::new(&SUMMARY_COLUMNS);
    let mut finals = Vec::new();
    let mut all_decrease = true;
    for &b in &betas {
        let (mut errs, mut traces) = (Vec::new(), Vec::new());
        let (mut decreasing, mut diverged) = (true, 0);
        for row in &cells.rows {
            if cells.get_f64(row, "beta")? != Some(b) {
                continue;
            }
            match cells.get(row, "status")? {
                "completed" => {}
                "diverged" => {
                    diverged += 1;
                    continue;
                }
                _ => continue,
            }
            if let (Some(e), Some(t), Some(p)) = (
                cells.get_f64(row, "final_test_error")?,
                cells.get_f64(row, "final_trace_hessian")?,
                cells.get_f64(row, "peak_trace_hessian")?,
            ) {
                errs.push(e);
                traces.push(t);
                decreasing &= t < p;
            }
        }
        let completed = errs.len();
        let e_med = median(&mut errs);
        let t_med = median(&mut traces);
        if completed > 0 {
            all_decrease &= decreasing;
            finals.push((b, e_med.unwrap(), t_med.unwrap()));
        }
        summary.push(vec![
            fmt_f64(b),
            fmt_opt(e_med),
            fmt_opt(errs.first().copied()),
            fmt_opt(errs.last().copied()),
            fmt_opt(t_med),
            fmt_opt(traces.first().copied()),
            fmt_opt(traces.last().copied()),
            if completed > 0 { decreasing.to_string() } else { String::new() },
            completed.to_string(),
            diverged.to_string(),
        ]);
    }
    let argmin = |k: fn(&(f64, f64, f64)) -> f64| {
        finals.iter().min_by(|a, b| k(a).total_cmp(&k(b))).map(|f| f.0)
    };
    Ok(SensingFit {
        best_test: argmin(|f| f.1),
        best_trace: argmin(|f| f.2),
        summary,
        finals,
        all_traces_decrease: all_decrease,
    })
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let out: &Path = &opts.out;
    let hash = cfg.hash();
    let data = dataset(cfg)?;
    let mut files = Vec::new();
    if cfg.sensing.save_dataset {
        let dir = out.join("dataset");
        crate::table::write_sensing_dataset(&dir, &data)?;
        files.push(dir);
    }
    let model = MatrixSensingModel::from_data(&data)?;
    debug_assert!(model.dim() == 2 * cfg.sensing.d * cfg.sensing.d);
    let results = run_sweep(cfg, &model, opts.parallelism)?;
    write(&cells_table(&results), out, "cells.csv", &mut files)?;

    let mut header: Vec<&str> = vec!["beta", "replicate"];
    header.extend(TRAJECTORY_COLUMNS);
    let mut traj = Table::new(&header);
    for r in &results {
        if let Some(rec) = &r.trajectory {
            traj.rows.extend(trajectory_rows(&[fmt_f64(r.beta), r.replicate.to_string()], rec));
        }
    }
    write(&traj, out, "trajectories.csv", &mut files)?;

    let fitted = fit(&Table::read(&out.join("cells.csv"))?)?;
    write(&fitted.summary, out, "summary.csv", &mut files)?;
    let traj = Table::read(&out.join("trajectories.csv"))?;
    plot::write_svg(&out.join("test_error.svg"), &plot::render(plot::PlotKind::SensingTestError, &traj)?, &mut files)?;
    plot::write_svg(&out.join("trace_hessian.svg"), &plot::render(plot::PlotKind::SensingTrace, &traj)?, &mut files)?;

    let records = results
        .iter()
        .map(|r| RunRecord {
            config_hash: hash.clone(),
            seed: cfg.seed,
            stream: r.stream,
            cell: r.key.clone(),
            status: r.status,
            outputs: vec!["cells.csv".into(), "trajectories.csv".into()],
            wall_clock: r.wall_clock,
            message: r.message.clone(),
        })
        .collect();
    Ok(Outcome { records, files })
}
