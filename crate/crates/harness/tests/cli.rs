use std::fs;
use std::process::Command;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgdm-lab"))
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn successful_run_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[drift]\npaths = 4\nsteps = 50\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(lab().arg("drift-compare").arg("--config").arg(&cfg).arg("--out").arg(&out)), 0);
    assert!(out.join("drift.csv").exists());
    assert!(out.join("runs.csv").exists());
}

#[test]
fn invalid_config_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[sensing]\nbetas = [0.5, 1.5]\n").unwrap();
    let out = lab().arg("matrix-sensing").arg("--config").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 2, column 15"), "{msg}");
}

#[test]
fn mismatched_kind_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "kind = \"beta-star\"\n").unwrap();
    assert_eq!(code(lab().arg("spectral").arg("--config").arg(&cfg).arg("--out").arg(dir.path())), 2);
}

#[test]
fn divergence_only_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "replicates = 1\n[uv]\ngammas = [0.0]\netas = [0.01, 5.0]\nmax_steps = 2000\n").unwrap();
    assert_eq!(code(lab().arg("uv-timescale").arg("--config").arg(&cfg).arg("--out").arg(dir.path())), 3);
}

#[test]
fn missing_input_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(code(lab().args(["fit", "--kind", "uv-timescale", "--input"]).arg(&missing)), 4);
    assert_eq!(
        code(lab().args(["plot", "--kind", "alpha", "--input"]).arg(missing.join("a.csv")).arg("--out").arg(dir.path().join("a.svg"))),
        4
    );
}

#[test]
fn plot_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("summary.csv");
    fs::write(&csv, "gamma,C,alpha,T0,residual,theory_alpha\n0.5,0.2,1.02,3.1,0.01,1\n0.8,0.2,0.7,2.0,0.02,0.8\n").unwrap();
    let svgs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let svg = dir.path().join(format!("a{i}.svg"));
            assert_eq!(code(lab().args(["plot", "--kind", "alpha", "--input"]).arg(&csv).arg("--out").arg(&svg)), 0);
            fs::read(svg).unwrap()
        })
        .collect();
    assert_eq!(svgs[0], svgs[1]);
}
