use std::fs;

use sgdm_harness::experiments::uv;
use sgdm_harness::plot::{render, PlotKind};
use sgdm_harness::sweep::{run_cells, CellStatus};
use sgdm_harness::table::Table;
use sgdm_harness::{run_experiment, ExperimentConfig, ExperimentKind, HarnessError, RunOptions};

fn opts(dir: &std::path::Path, parallelism: usize) -> RunOptions {
    RunOptions {
        out: dir.to_path_buf(),
        parallelism,
    }
}

#[test]
fn config_errors_carry_line_and_column() {
    let text = "kind = \"uv-timescale\"\n\n[uv]\ngammas = [0.3, -0.5]\n";
    let err = ExperimentConfig::from_toml(text, None).unwrap_err();
    assert_eq!(err.path.as_deref(), Some("uv.gammas[1]"));
    assert_eq!((err.line, err.column), (Some(4), Some(16)));

    let err = ExperimentConfig::from_toml("[uv]\nn = \"ten\"\n", None).unwrap_err();
    assert_eq!(err.line, Some(2));

    let err = ExperimentConfig::from_toml("[uv]\nwidth = 3\n", None).unwrap_err();
    assert_eq!(err.line, Some(2));
}

#[test]
fn explicit_kind_wins_over_fallback() {
    let cfg = ExperimentConfig::from_toml("kind = \"drift-compare\"\n", Some(ExperimentKind::MatrixSensing)).unwrap();
    assert_eq!(cfg.kind, ExperimentKind::DriftCompare);
    let cfg = ExperimentConfig::from_toml("seed = 4\n", Some(ExperimentKind::MatrixSensing)).unwrap();
    assert_eq!(cfg.kind, ExperimentKind::MatrixSensing);
    assert_eq!(cfg.seed, 4);
}

#[test]
fn config_roundtrips_through_its_serialization() {
    let mut cfg = ExperimentConfig::with_kind(ExperimentKind::BetaStarProtocol);
    cfg.seed = 17;
    cfg.beta_star.etas = vec![0.5, 2.0];
    let back = ExperimentConfig::from_toml(&cfg.to_toml(), None).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn run_cells_keeps_cell_order() {
    let cells: Vec<u64> = (0..100).collect();
    let serial = run_cells(&cells, 1, |&x| x * x).unwrap();
    let parallel = run_cells(&cells, 8, |&x| x * x).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn empty_grid_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::with_kind(ExperimentKind::UvTimescale);
    cfg.uv.etas.clear();
    let outcome = run_experiment(&cfg, &opts(dir.path(), 2)).unwrap();
    assert!(outcome.records.is_empty());
    assert_eq!(outcome.exit_code(), 0);
    let text = fs::read_to_string(dir.path().join("cells.csv")).unwrap();
    assert_eq!(text, format!("{}\n", uv::CELL_COLUMNS.join(",")));
}

#[test]
fn diverging_cell_is_recorded_and_others_complete() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::with_kind(ExperimentKind::UvTimescale);
    cfg.uv.gammas = vec![0.0];
    cfg.uv.etas = vec![0.01, 5.0];
    cfg.uv.max_steps = 5000;
    cfg.replicates = 1;
    let outcome = run_experiment(&cfg, &opts(dir.path(), 2)).unwrap();
    assert_eq!(outcome.count(CellStatus::Completed), 1);
    assert_eq!(outcome.count(CellStatus::Diverged), 1);
    assert_eq!(outcome.exit_code(), 3);
    let cells = Table::read(&dir.path().join("cells.csv")).unwrap();
    let status: Vec<&str> = cells.rows.iter().map(|r| cells.get(r, "status").unwrap()).collect();
    assert_eq!(status, ["completed", "diverged"]);
}

#[test]
fn figures_come_from_persisted_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::with_kind(ExperimentKind::UvTimescale);
    cfg.uv.gammas = vec![0.5, 2.0 / 3.0];
    cfg.uv.etas = vec![1e-2, 3e-2, 1e-1];
    run_experiment(&cfg, &opts(dir.path(), 1)).unwrap();
    let summary = Table::read(&dir.path().join("summary.csv")).unwrap();
    let a = render(PlotKind::Alpha, &summary).unwrap();
    let b = render(PlotKind::Alpha, &Table::read(&dir.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, fs::read_to_string(dir.path().join("alpha.svg")).unwrap());
}

#[test]
fn empty_csv_renders_axes_only() {
    let svg = render(PlotKind::BetaStar, &Table::parse("").unwrap()).unwrap();
    assert!(svg.contains("<svg"));
    assert!(!svg.contains("<circle"));
}

#[test]
fn plot_schema_mismatch_is_a_format_error() {
    let t = Table::parse("x,y\n1,2\n").unwrap();
    assert!(matches!(render(PlotKind::Alpha, &t), Err(HarnessError::Format(_))));
}
