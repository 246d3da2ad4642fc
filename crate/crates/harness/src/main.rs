use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgdm_harness::experiments::{beta_star, sensing, uv};
use sgdm_harness::plot::{self, PlotKind};
use sgdm_harness::sweep::CellStatus;
use sgdm_harness::table::Table;
use sgdm_harness::{run_experiment, ExperimentConfig, ExperimentKind, HarnessError, Result, RunOptions};

#[derive(Parser)]
#[command(name = "sgdm-lab", version, about = "Label-noise SGD with momentum experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence timescale sweep on the vector UV model.
    UvTimescale(RunArgs),
    /// Test error and Hessian trace across momentum on matrix sensing.
    MatrixSensing(RunArgs),
    /// Linearized spectrum at a point on the zero-loss manifold.
    Spectral(RunArgs),
    /// Simulated drift along the manifold against the limiting prediction.
    DriftCompare(RunArgs),
    /// Optimal-momentum protocol on a small MLP.
    BetaStar(RunArgs),
    /// Recompute fits from a persisted cells.csv.
    Fit {
        #[arg(long, value_enum)]
        kind: FitKind,
        /// Directory holding cells.csv.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the fitted tables; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an SVG figure from a persisted CSV.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Full-size matrix sensing (d = 100, r = 5, P = 2500).
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    UvTimescale,
    MatrixSensing,
    BetaStar,
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            ExperimentConfig::from_toml(&text, Some(kind))?
        }
        None => ExperimentConfig::with_kind(kind),
    };
    if cfg.kind != kind {
        return Err(sgdm_harness::ConfigError {
            message: format!("config is for `{}`, not `{kind}`", cfg.kind),
            path: Some("kind".into()),
            line: None,
            column: None,
        }
        .into());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if args.paper_scale {
        cfg.sensing.paper_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<u8> {
    let cfg = load(kind, args)?;
    let parallelism = args
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let opts = RunOptions {
        out: cfg.output_dir.clone(),
        parallelism,
    };
    let outcome = run_experiment(&cfg, &opts)?;
    println!(
        "{kind}: {} completed, {} diverged, {} failed; outputs in {}",
        outcome.count(CellStatus::Completed),
        outcome.count(CellStatus::Diverged),
        outcome.count(CellStatus::Failed),
        opts.out.display()
    );
    for r in outcome.records.iter().filter(|r| r.status != CellStatus::Completed) {
        eprintln!("{} {}: {}", r.status, r.cell, r.message);
    }
    Ok(outcome.exit_code())
}

fn fit(kind: FitKind, input: &Path, out: &Path) -> Result<u8> {
    let cells = Table::read(&input.join("cells.csv"))?;
    let mut files = Vec::new();
    let mut save = |t: &Table, name: &str| -> Result<()> {
        let p = out.join(name);
        t.write(&p)?;
        files.push(p);
        Ok(())
    };
    match kind {
        FitKind::UvTimescale => {
            let f = uv::fit(&cells)?;
            save(&f.sweep, "sweep.csv")?;
            save(&f.summary, "summary.csv")?;
            for (g, c, l) in &f.power_laws {
                println!("gamma {g:.4} C {c:.4}: alpha {:.4} (theory {:.4}), T0 {:.4e}", l.alpha, uv::theory_alpha(*g), l.t0);
            }
        }
        FitKind::MatrixSensing => {
            let f = sensing::fit(&cells)?;
            save(&f.summary, "summary.csv")?;
            println!(
                "best beta by test error {:?}, by trace {:?}; traces decrease: {}",
                f.best_test, f.best_trace, f.all_traces_decrease
            );
        }
        FitKind::BetaStar => {
            let f = beta_star::fit(&cells)?;
            save(&f.accuracy, "accuracy.csv")?;
            save(&f.sweep, "sweep.csv")?;
            save(&f.summary, "summary.csv")?;
            for (eta, k) in &f.kinks {
                println!("eta {eta:.4}: beta* {:.5}{}", k.beta_star, if k.at_boundary { " (boundary)" } else { "" });
            }
            match f.exponent() {
                Some(e) => println!("exponent {e:.4}"),
                None => println!("exponent unavailable"),
            }
        }
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::UvTimescale(a) => run(ExperimentKind::UvTimescale, a),
        Command::MatrixSensing(a) => run(ExperimentKind::MatrixSensing, a),
        Command::Spectral(a) => run(ExperimentKind::SpectralReport, a),
        Command::DriftCompare(a) => run(ExperimentKind::DriftCompare, a),
        Command::BetaStar(a) => run(ExperimentKind::BetaStarProtocol, a),
        Command::Fit { kind, input, out } => fit(*kind, input, out.as_deref().unwrap_or(input)),
        Command::Plot { kind, input, out } => Table::read(input)
            .and_then(|t| plot::render(*kind, &t))
            .and_then(|svg| plot::write_svg(out, &svg, &mut Vec::new()))
            .map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
