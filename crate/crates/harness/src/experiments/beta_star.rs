//! Optimal momentum on a small MLP: settle on the manifold with noiseless
//! descent, run label-flip SGDM for a fixed budget, descend back to the
//! manifold, then locate the accuracy kink `β*` per `η` and fit
//! `1 - β* ∝ η^γ`.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use sgdm_core::analysis::{fit_piecewise, fit_powerlaw, PiecewiseFit, PowerLawFit};
use sgdm_core::models::{generate_classification, ClassificationData, ClassificationSpec, MlpModel, Model, NoiseMap};
use sgdm_core::numerics::RandomStream;
use sgdm_core::optimizer::{
    project_to_manifold, run_trajectory, HyperParams, OptimizerState, ProjectionOptions, Recorder, StopRule,
};

use super::{write, Outcome, RunOptions, RunRecord};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::plot;
use crate::sweep::{coords, run_cells, stream_index, CellStatus};
use crate::table::{fmt_f64, fmt_opt, Table};

pub const KIND: &str = "beta-star";

pub const CELL_COLUMNS: [&str; 10] = [
    "eta", "beta", "replicate", "stream", "status", "steps", "accuracy", "trace_hessian", "loss", "message",
];

pub const ACCURACY_COLUMNS: [&str; 6] = ["eta", "beta", "accuracy", "accuracy_min", "accuracy_max", "completed"];

pub const SWEEP_COLUMNS: [&str; 13] = [
    "gamma", "C", "eta", "T_c", "r_squared", "alpha", "T0", "beta_star", "a_max", "a1", "a2", "residual",
    "at_boundary",
];

pub const SUMMARY_COLUMNS: [&str; 4] = ["exponent", "prefactor", "residual", "points"];

pub struct BetaStarSetup {
    pub data: ClassificationData,
    pub model: MlpModel,
    /// Phase-one point on the manifold.
    pub start: DVector<f64>,
    pub phase1_steps: u64,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<BetaStarSetup> {
    let b = &cfg.beta_star;
    let data = generate_classification(
        &ClassificationSpec {
            d_in: b.d_in,
            train: b.train,
            test: b.test,
            teacher_width: b.teacher_width,
        },
        &mut RandomStream::new(cfg.seed, stream_index(&format!("{KIND}/data"))),
    )?;
    let mut widths = vec![b.d_in];
    widths.extend(std::iter::repeat(b.width).take(b.hidden_layers));
    widths.push(1);
    let shrink = 1.0 - 2.0 * b.flip;
    let labels = data.train_labels.iter().map(|y| y * shrink).collect();
    let model = MlpModel::new(widths, sgdm_core::models::Activation::Tanh, data.train_inputs.clone(), labels)?;
    let init = model.init_params(&mut RandomStream::new(cfg.seed, stream_index(&format!("{KIND}/init"))));
    let proj = project_to_manifold(
        &model,
        &init,
        b.phase1_tol,
        &ProjectionOptions {
            beta: b.projection_beta,
            eta: Some(b.projection_eta),
            ..ProjectionOptions::default()
        },
    )?;
    Ok(BetaStarSetup {
        data,
        model,
        start: proj.w,
        phase1_steps: proj.steps,
    })
}

/// Fraction of test points whose label sign the network reproduces.
pub fn accuracy(s: &BetaStarSetup, w: &[f64]) -> f64 {
    let d_in = s.data.d_in;
    let hits = s
        .data
        .test_inputs
        .chunks(d_in)
        .zip(&s.data.test_labels)
        .filter(|(x, &y)| s.model.predict(w, x)[0] * y > 0.0)
        .count();
    hits as f64 / s.data.test_labels.len().max(1) as f64
}

#[derive(Debug, Clone)]
pub struct BetaStarCellResult {
    pub eta: f64,
    pub beta: f64,
    pub replicate: usize,
    pub key: String,
    pub stream: u64,
    pub status: CellStatus,
    pub steps: u64,
    pub accuracy: Option<f64>,
    pub trace_hessian: Option<f64>,
    pub loss: Option<f64>,
    pub message: String,
    pub wall_clock: Duration,
}

fn run_one(cfg: &ExperimentConfig, s: &BetaStarSetup, eta: f64, beta: f64, replicate: usize) -> BetaStarCellResult {
    let start = Instant::now();
    let b = &cfg.beta_star;
    let key = coords(KIND, &[("eta", eta), ("beta", beta)], replicate);
    let stream = stream_index(&key);
    let mut r = BetaStarCellResult {
        eta,
        beta,
        replicate,
        key,
        stream,
        status: CellStatus::Failed,
        steps: 0,
        accuracy: None,
        trace_hessian: None,
        loss: None,
        message: String::new(),
        wall_clock: Duration::ZERO,
    };
    let outcome = (|| -> sgdm_core::Result<()> {
        let noisy = run_trajectory(
            &s.model,
            &NoiseMap::label_flip(b.flip),
            &HyperParams::explicit(eta, beta)?,
            OptimizerState::at_rest(s.start.clone()),
            StopRule::max_steps(b.noisy_steps),
            b.noisy_steps,
            &Recorder::default(),
            &mut RandomStream::new(cfg.seed, stream),
        )?;
        r.steps = noisy.final_state.k;
        if noisy.diverged() {
            r.status = CellStatus::Diverged;
            r.message = format!("diverged at step {}", noisy.final_state.k);
            return Ok(());
        }
        let settle = run_trajectory(
            &s.model,
            &NoiseMap::none(),
            &HyperParams::explicit(b.projection_eta, b.projection_beta)?,
            OptimizerState::at_rest(noisy.final_state.w),
            StopRule::max_steps(b.projection_steps),
            b.projection_steps.max(1),
            &Recorder::default(),
            &mut RandomStream::new(cfg.seed, stream),
        )?;
        if settle.diverged() {
            r.message = "descent back to the manifold diverged".into();
            return Ok(());
        }
        let w = &settle.final_state.w;
        r.accuracy = Some(accuracy(s, w.as_slice()));
        r.trace_hessian = s.model.trace_hessian(w).ok();
        r.loss = Some(s.model.loss(w)?);
        r.status = CellStatus::Completed;
        Ok(())
    })();
    if let Err(e) = outcome {
        r.status = CellStatus::Failed;
        r.message = e.to_string();
    }
    r.wall_clock = start.elapsed();
    r
}

pub fn run_sweep(cfg: &ExperimentConfig, s: &BetaStarSetup, parallelism: usize) -> Result<Vec<BetaStarCellResult>> {
    let b = &cfg.beta_star;
    let mut cells = Vec::new();
    for &eta in &b.etas {
        for &beta in &b.betas {
            for rep in 0..cfg.replicates {
                cells.push((eta, beta, rep));
            }
        }
    }
    run_cells(&cells, parallelism, |&(eta, beta, rep)| run_one(cfg, s, eta, beta, rep))
}

pub fn cells_table(results: &[BetaStarCellResult]) -> Table {
    let mut t = Table::new(&CELL_COLUMNS);
    for r in results {
        t.push(vec![
            fmt_f64(r.eta),
            fmt_f64(r.beta),
            r.replicate.to_string(),
            r.stream.to_string(),
            r.status.to_string(),
            r.steps.to_string(),
            fmt_opt(r.accuracy),
            fmt_opt(r.trace_hessian),
            fmt_opt(r.loss),
            r.message.clone(),
        ]);
    }
    t
}

#[derive(Debug, Clone)]
pub struct BetaStarFit {
    pub accuracy: Table,
    pub sweep: Table,
    pub summary: Table,
    /// `(η, kink fit)` for every `η` with enough points.
    pub kinks: Vec<(f64, PiecewiseFit)>,
    /// Fit of `1 - β*` against `η`; the momentum exponent is `-alpha`.
    pub law: Option<PowerLawFit>,
}

impl BetaStarFit {
    pub fn exponent(&self) -> Option<f64> {
        self.law.map(|l| -l.alpha)
    }
}

fn unique_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::new();
    for x in values {
        if !v.contains(&x) {
            v.push(x);
        }
    }
    v.sort_by(f64::total_cmp);
    v
}

/// Mean accuracy per `(η, β)`, a kink fit per `η`, and the power law across `η`.
pub fn fit(cells: &Table) -> Result<BetaStarFit> {
    cells.require(&CELL_COLUMNS)?;
    let mut parsed = Vec::new();
    for row in &cells.rows {
        let eta = cells.get_f64(row, "eta")?.unwrap_or(f64::NAN);
        let beta = cells.get_f64(row, "beta")?.unwrap_or(f64::NAN);
        let acc = match cells.get(row, "status")? {
            "completed" => cells.get_f64(row, "accuracy")?,
            _ => None,
        };
        parsed.push((eta, beta, acc));
    }
    let etas = unique_sorted(parsed.iter().map(|p| p.0));
    let betas = unique_sorted(parsed.iter().map(|p| p.1));

    let mut accuracy = Table::new(&ACCURACY_COLUMNS);
    let mut sweep = Table::new(&SWEEP_COLUMNS);
    let mut kinks = Vec::new();
    let mut curves = Vec::new();
    for &eta in &etas {
        let mut curve = Vec::new();
        for &beta in &betas {
            let accs: Vec<f64> = parsed
                .iter()
                .filter(|p| p.0 == eta && p.1 == beta)
                .filter_map(|p| p.2)
                .collect();
            if !parsed.iter().any(|p| p.0 == eta && p.1 == beta) {
                continue;
            }
            let mean = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
            if let Some(m) = mean {
                curve.push((beta, m));
            }
            accuracy.push(vec![
                fmt_f64(eta),
                fmt_f64(beta),
                fmt_opt(mean),
                fmt_opt(accs.iter().copied().reduce(f64::min)),
                fmt_opt(accs.iter().copied().reduce(f64::max)),
                accs.len().to_string(),
            ]);
        }
        curves.push((eta, fit_piecewise(&curve).ok()));
        if let Some(k) = curves.last().unwrap().1 {
            kinks.push((eta, k));
        }
    }
    let points: Vec<(f64, f64)> = kinks.iter().map(|(eta, k)| (*eta, 1.0 - k.beta_star)).collect();
    let law = fit_powerlaw(&points).ok();
    for (eta, kink) in curves {
        sweep.push(vec![
            fmt_opt(law.map(|l| -l.alpha)),
            fmt_opt(law.map(|l| l.t0)),
            fmt_f64(eta),
            String::new(),
            String::new(),
            fmt_opt(law.map(|l| l.alpha)),
            fmt_opt(law.map(|l| l.t0)),
            fmt_opt(kink.map(|k| k.beta_star)),
            fmt_opt(kink.map(|k| k.a_max)),
            fmt_opt(kink.map(|k| k.a1)),
            fmt_opt(kink.map(|k| k.a2)),
            fmt_opt(kink.map(|k| k.residual)),
            kink.map(|k| k.at_boundary.to_string()).unwrap_or_default(),
        ]);
    }
    let mut summary = Table::new(&SUMMARY_COLUMNS);
    if let Some(l) = law {
        summary.push(vec![
            fmt_f64(-l.alpha),
            fmt_f64(l.t0),
            fmt_f64(l.residual),
            points.len().to_string(),
        ]);
    }
    Ok(BetaStarFit {
        accuracy,
        sweep,
        summary,
        kinks,
        law,
    })
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    let out: &Path = &opts.out;
    let s = setup(cfg)?;
    let mut files = Vec::new();
    let mut phase1 = Table::new(&["steps", "loss", "accuracy", "trace_hessian"]);
    phase1.push(vec![
        s.phase1_steps.to_string(),
        fmt_f64(s.model.loss(&s.start)?),
        fmt_f64(accuracy(&s, s.start.as_slice())),
        fmt_opt(s.model.trace_hessian(&s.start).ok()),
    ]);
    write(&phase1, out, "phase1.csv", &mut files)?;

    let results = run_sweep(cfg, &s, opts.parallelism)?;
    write(&cells_table(&results), out, "cells.csv", &mut files)?;
    let fitted = fit(&Table::read(&out.join("cells.csv"))?)?;
    write(&fitted.accuracy, out, "accuracy.csv", &mut files)?;
    write(&fitted.sweep, out, "sweep.csv", &mut files)?;
    write(&fitted.summary, out, "summary.csv", &mut files)?;
    plot::write_svg(
        &out.join("beta_star.svg"),
        &plot::render(plot::PlotKind::BetaStar, &Table::read(&out.join("sweep.csv"))?)?,
        &mut files,
    )?;

    let hash = cfg.hash();
    let records = results
        .iter()
        .map(|r| RunRecord {
            config_hash: hash.clone(),
            seed: cfg.seed,
            stream: r.stream,
            cell: r.key.clone(),
            status: r.status,
            outputs: vec!["cells.csv".into()],
            wall_clock: r.wall_clock,
            message: r.message.clone(),
        })
        .collect();
    Ok(Outcome { records, files })
}
