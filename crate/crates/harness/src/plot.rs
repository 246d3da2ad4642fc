//! Deterministic SVG figures rendered from persisted CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::experiments::uv::theory_alpha;
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Fitted `α` against `γ` (uv summary.csv), with the theory curve.
    Alpha,
    /// `T_c` against `η` per `γ`, log-log (uv sweep.csv).
    Timescales,
    /// Expected test error against step per `β` (sensing trajectories.csv).
    SensingTestError,
    /// Hessian trace against step per `β` (sensing trajectories.csv).
    SensingTrace,
    /// `1 - β*` against `η` with the fitted power law, log-log (beta-star sweep.csv).
    BetaStar,
}

impl PlotKind {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Alpha => &["gamma", "alpha"],
            PlotKind::Timescales => &["gamma", "eta", "T_c"],
            PlotKind::SensingTestError => &["beta", "replicate", "step", "test_error"],
            PlotKind::SensingTrace => &["beta", "replicate", "step", "trace_hessian"],
            PlotKind::BetaStar => &["gamma", "C", "eta", "beta_star"],
        }
    }

    fn labels(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::Alpha => ("gamma", "alpha"),
            PlotKind::Timescales => ("eta", "T_c"),
            PlotKind::SensingTestError => ("step", "expected test error"),
            PlotKind::SensingTrace => ("step", "Tr H"),
            PlotKind::BetaStar => ("eta", "1 - beta*"),
        }
    }

    fn log_axes(self) -> (bool, bool) {
        match self {
            PlotKind::Alpha => (false, false),
            PlotKind::Timescales | PlotKind::BetaStar => (true, true),
            PlotKind::SensingTestError | PlotKind::SensingTrace => (false, true),
        }
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    markers: bool,
    dashed: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// Groups rows by the value in `key`, in order of first appearance.
fn grouped(t: &Table, key: &str, x: &str, y: &str, filter: impl Fn(&[String]) -> Result<bool>) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &t.rows {
        if !filter(row)? {
            continue;
        }
        let (Some(xv), Some(yv)) = (t.get_f64(row, x)?, t.get_f64(row, y)?) else {
            continue;
        };
        let k = t.get(row, key)?.to_string();
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => g.1.push((xv, yv)),
            None => groups.push((k, vec![(xv, yv)])),
        }
    }
    Ok(groups)
}

fn short(s: &str) -> String {
    s.parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or_else(|_| s.to_string())
}

fn series(kind: PlotKind, t: &Table) -> Result<Vec<Series>> {
    let line = |label: String, points: Vec<(f64, f64)>| Series {
        label,
        points,
        markers: true,
        dashed: false,
    };
    Ok(match kind {
        PlotKind::Alpha => {
            let mut pts = Vec::new();
            for row in &t.rows {
                if let (Some(g), Some(a)) = (t.get_f64(row, "gamma")?, t.get_f64(row, "alpha")?) {
                    pts.push((g, a));
                }
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let theory = (0..=100).map(|i| i as f64 / 100.0).map(|g| (g, theory_alpha(g))).collect();
            vec![
                Series {
                    label: "max(2(1-g), g)".into(),
                    points: theory,
                    markers: false,
                    dashed: true,
                },
                line("fitted".into(), pts),
            ]
        }
        PlotKind::Timescales => grouped(t, "gamma", "eta", "T_c", |_| Ok(true))?
            .into_iter()
            .map(|(g, p)| line(format!("gamma {}", short(&g)), p))
            .collect(),
        PlotKind::SensingTestError | PlotKind::SensingTrace => {
            let y = if kind == PlotKind::SensingTrace { "trace_hessian" } else { "test_error" };
            grouped(t, "beta", "step", y, |row| Ok(t.get(row, "replicate")? == "0"))?
                .into_iter()
                .map(|(b, p)| Series {
                    label: format!("beta {}", short(&b)),
                    points: p,
                    markers: false,
                    dashed: false,
                })
                .collect()
        }
        PlotKind::BetaStar => {
            let mut pts = Vec::new();
            let mut law = None;
            for row in &t.rows {
                if let (Some(eta), Some(b)) = (t.get_f64(row, "eta")?, t.get_f64(row, "beta_star")?) {
                    pts.push((eta, 1.0 - b));
                }
                if let (Some(g), Some(c)) = (t.get_f64(row, "gamma")?, t.get_f64(row, "C")?) {
                    law = Some((g, c));
                }
            }
            let mut out = vec![line("beta* kink".into(), pts.clone())];
            if let Some((g, c)) = law {
                let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                if lo.is_finite() && hi.is_finite() {
                    let fitted = (0..=20)
                        .map(|i| lo * (hi / lo).powf(i as f64 / 20.0))
                        .map(|e| (e, c * e.powf(g)))
                        .collect();
                    out.push(Series {
                        label: format!("fit, exponent {g:.3}"),
                        points: fitted,
                        markers: false,
                        dashed: true,
                    });
                }
            }
            out
        }
    })
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let vals: Vec<f64> = values
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .map(|v| if log { v.log10() } else { v })
            .collect();
        let (mut lo, mut hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        } else if !log {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let step = ((self.hi - self.lo) / 6.0).ceil().max(1.0) as i32;
            (self.lo as i32..=self.hi as i32)
                .step_by(step as usize)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            (0..=5)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / 5.0)
                .map(|v| (v, format!("{v:.3}")))
                .collect()
        }
    }
}

/// Renders `kind` from `table`. A table without rows gives axes only; one
/// lacking the kind's columns is a format error.
pub fn render(kind: PlotKind, table: &Table) -> Result<String> {
    let empty = table.rows.is_empty() && table.header.is_empty();
    if !empty {
        table
            .require(kind.columns())
            .map_err(|e| HarnessError::format(format!("{kind:?} plot: {e}")))?;
    }
    let series = if empty { Vec::new() } else { series(kind, table)? };
    let (xlog, ylog) = kind.log_axes();
    let xs = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), xlog);
    let ys = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), ylog);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |v: f64| LEFT + xs.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ys.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (v, label) in xs.ticks() {
        let x = px(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, TOP + ph + 18.0);
    }
    for (v, label) in ys.ticks() {
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 8.0, y + 4.0);
    }
    let (xl, yl) = kind.labels();
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xl}</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{yl}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite() && (!xlog || p.0 > 0.0) && (!ylog || p.1 > 0.0))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            pts.join(" ")
        );
        if ser.markers {
            for p in &pts {
                let (x, y) = p.split_once(',').unwrap();
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let lx = LEFT + pw + 10.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 25.0, ly + 4.0, ser.label);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(path: &Path, svg: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, svg).map_err(|e| HarnessError::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}
