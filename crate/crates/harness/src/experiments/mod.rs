//! The five experiment kinds. Each writes its raw per-cell table, then derives
//! fits and summaries from the persisted CSV only.

pub mod beta_star;
pub mod drift;
pub mod sensing;
pub mod spectral;
pub mod uv;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};
use crate::sweep::CellStatus;
use crate::table::Table;

/// One executed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub stream: u64,
    pub cell: String,
    pub status: CellStatus,
    /// Files holding this cell's rows, relative to the output directory.
    pub outputs: Vec<String>,
    /// Kept in memory only, so that persisted outputs stay reproducible.
    pub wall_clock: Duration,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub records: Vec<RunRecord>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn count(&self, status: CellStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    /// 0 when every cell completed, 3 when the only failures are divergences,
    /// 4 when any cell failed otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.count(CellStatus::Failed) > 0 {
            4
        } else if self.count(CellStatus::Diverged) > 0 {
            3
        } else {
            0
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub parallelism: usize,
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out).map_err(|e| HarnessError::io(&opts.out, e))?;
    let config_path = opts.out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()).map_err(|e| HarnessError::io(&config_path, e))?;
    let mut outcome = match cfg.kind {
        ExperimentKind::UvTimescale => uv::run(cfg, opts)?,
        ExperimentKind::MatrixSensing => sensing::run(cfg, opts)?,
        ExperimentKind::SpectralReport => spectral::run(cfg, opts)?,
        ExperimentKind::DriftCompare => drift::run(cfg, opts)?,
        ExperimentKind::BetaStarProtocol => beta_star::run(cfg, opts)?,
    };
    let runs = opts.out.join("runs.csv");
    runs_table(&outcome.records).write(&runs)?;
    outcome.files.insert(0, config_path);
    outcome.files.push(runs);
    Ok(outcome)
}

pub fn runs_table(records: &[RunRecord]) -> Table {
    let mut t = Table::new(&["config_hash", "seed", "stream", "cell", "status", "outputs", "message"]);
    for r in records {
        t.push(vec![
            r.config_hash.clone(),
            r.seed.to_string(),
            r.stream.to_string(),
            r.cell.clone(),
            r.status.to_string(),
            r.outputs.join(";"),
            r.message.clone(),
        ]);
    }
    t
}

pub(crate) fn write(t: &Table, out: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = out.join(name);
    t.write(&path)?;
    files.push(path);
    Ok(())
}

pub(crate) fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}
