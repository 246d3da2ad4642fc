//! Experiment configuration: a TOML document with one section per experiment
//! kind. Every field has a default, so an empty file is a valid configuration
//! for any kind.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::de::{DeTable, DeValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    UvTimescale,
    MatrixSensing,
    SpectralReport,
    DriftCompare,
    BetaStarProtocol,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::UvTimescale => "uv-timescale",
            ExperimentKind::MatrixSensing => "matrix-sensing",
            ExperimentKind::SpectralReport => "spectral-report",
            ExperimentKind::DriftCompare => "drift-compare",
            ExperimentKind::BetaStarProtocol => "beta-star-protocol",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Linear,
    Tanh,
    Relu,
}

impl From<ActivationKind> for sgdm_core::models::Activation {
    fn from(a: ActivationKind) -> Self {
        use sgdm_core::models::Activation;
        match a {
            ActivationKind::Linear => Activation::Linear,
            ActivationKind::Tanh => Activation::Tanh,
            ActivationKind::Relu => Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralModel {
    Uv,
    Sensing,
}

/// `points` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![min];
    }
    let (a, b) = (min.ln(), max.ln());
    (0..points)
        .map(|i| {
            if i == 0 {
                min
            } else if i + 1 == points {
                max
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Master seed; datasets, initializations and every cell stream derive from it.
    pub seed: u64,
    /// Independent noise realizations per sweep cell.
    pub replicates: usize,
    pub output_dir: PathBuf,
    pub uv: UvConfig,
    pub sensing: SensingConfig,
    pub spectral: SpectralConfig,
    pub drift: DriftConfig,
    pub beta_star: BetaStarConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::UvTimescale,
            seed: 0,
            replicates: 3,
            output_dir: PathBuf::from("out"),
            uv: UvConfig::default(),
            sensing: SensingConfig::default(),
            spectral: SpectralConfig::default(),
            drift: DriftConfig::default(),
            beta_star: BetaStarConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointFitConfig {
    pub enabled: bool,
    pub grid: Vec<f64>,
    pub refine_iterations: usize,
}

impl Default for JointFitConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            grid: vec![0.1, 0.14, 0.2, 0.28, 0.4],
            refine_iterations: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UvConfig {
    pub n: usize,
    pub samples: usize,
    pub activation: ActivationKind,
    pub epsilon: f64,
    pub c: f64,
    pub gammas: Vec<f64>,
    pub etas: Vec<f64>,
    /// Stop once `|u|² + |v|² < stop_fraction · n`.
    pub stop_fraction: f64,
    pub max_steps: u64,
    pub record_every: u64,
    pub save_trajectories: bool,
    pub joint_fit: JointFitConfig,
}

impl Default for UvConfig {
    fn default() -> Self {
        Self {
            n: 10,
            samples: 5,
            activation: ActivationKind::Linear,
            epsilon: 0.5,
            c: 0.2,
            gammas: vec![0.3, 0.5, 2.0 / 3.0, 0.8],
            etas: log_grid(1e-3, 1e-1, 6),
            stop_fraction: 0.1,
            max_steps: 5_000_000,
            record_every: 1,
            save_trajectories: false,
            joint_fit: JointFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    pub d: usize,
    pub rank: usize,
    /// Number of measurements; 0 means `5 · rank · d`.
    pub samples: usize,
    pub eta: f64,
    pub epsilon_sq: f64,
    pub betas: Vec<f64>,
    pub steps: u64,
    pub record_every: u64,
    /// Fraction of the recorded samples averaged into the final values.
    pub final_window: f64,
    pub save_dataset: bool,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            d: 20,
            rank: 2,
            samples: 0,
            eta: 0.1,
            epsilon_sq: 0.1,
            betas: vec![0.0, 0.5, 0.8, 0.9, 0.95, 0.97, 0.99],
            steps: 20_000,
            record_every: 200,
            final_window: 0.1,
            save_dataset: false,
        }
    }
}

impl SensingConfig {
    pub fn measurements(&self) -> usize {
        if self.samples == 0 {
            5 * self.rank * self.d
        } else {
            self.samples
        }
    }

    /// The full-size problem: `d = 100`, `r = 5`, `P = 2500`.
    pub fn paper_scale(&mut self) {
        self.d = 100;
        self.rank = 5;
        self.samples = 2500;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub model: SpectralModel,
    pub eta: f64,
    /// Explicit momentum; when absent `β = 1 - C η^γ`.
    pub beta: Option<f64>,
    pub gamma: f64,
    pub c: f64,
    pub projection_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            model: SpectralModel::Uv,
            eta: 0.01,
            beta: None,
            gamma: 2.0 / 3.0,
            c: 0.2,
            projection_tol: 1e-24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub n: usize,
    pub samples: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub gamma: f64,
    pub c: f64,
    /// Independent SGDM paths averaged at every checkpoint.
    pub paths: usize,
    pub steps: u64,
    pub checkpoints: usize,
    pub scaling_etas: Vec<f64>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            n: 10,
            samples: 5,
            epsilon: 0.5,
            eta: 0.01,
            gamma: 0.5,
            c: 0.2,
            paths: 200,
            steps: 500,
            checkpoints: 5,
            scaling_etas: vec![1e-3, 2e-3, 5e-3, 1e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaStarConfig {
    pub d_in: usize,
    pub train: usize,
    pub test: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub teacher_width: usize,
    pub flip: f64,
    pub etas: Vec<f64>,
    pub betas: Vec<f64>,
    pub noisy_steps: u64,
    pub phase1_tol: f64,
    pub projection_steps: u64,
    pub projection_eta: f64,
    pub projection_beta: f64,
}

impl Default for BetaStarConfig {
    fn default() -> Self {
        Self {
            d_in: 8,
            train: 256,
            test: 2000,
            width: 32,
            hidden_layers: 2,
            teacher_width: 16,
            flip: 0.2,
            etas: vec![0.25, 1.0, 4.0],
            betas: [0.1, 0.07, 0.05, 0.035, 0.025, 0.018, 0.0125, 0.009, 0.006, 0.004, 0.003, 0.002]
                .iter()
                .map(|x| 1.0 - x)
                .collect(),
            noisy_steps: 2000,
            phase1_tol: 1e-6,
            projection_steps: 2000,
            projection_eta: 2.0,
            projection_beta: 0.9,
        }
    }
}

/// A rejected configuration, located in the source text when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    /// Dotted key path of the offending value, if known.
    pub path: Option<String>,
    /// 1-based line and column.
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "config error at line {l}, column {c}: ")?,
            _ => write!(f, "config error: ")?,
        }
        if let Some(p) = &self.path {
            write!(f, "`{p}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

/// Byte span of the value at a dotted path such as `uv.gammas[2]`.
fn locate(text: &str, path: &str) -> Option<std::ops::Range<usize>> {
    let root = DeTable::parse(text).ok()?;
    let mut table = Some(root.get_ref());
    let mut node: Option<&toml::Spanned<DeValue>> = None;
    for part in path.split('.') {
        let (key, index) = match part.find('[') {
            Some(i) => (&part[..i], part[i + 1..part.len() - 1].parse::<usize>().ok()),
            None => (part, None),
        };
        let mut next = match (table, node) {
            (Some(t), _) => t.get(key)?,
            (None, Some(n)) => n.get_ref().get(key)?,
            (None, None) => return None,
        };
        if let Some(i) = index {
            next = next.get_ref().get(i)?;
        }
        table = None;
        node = Some(next);
    }
    node.map(|n| n.span())
}

struct Check {
    errors: Vec<(String, String)>,
}

impl Check {
    fn require(&mut self, ok: bool, path: impl Into<String>, msg: impl Into<String>) {
        if !ok {
            self.errors.push((path.into(), msg.into()));
        }
    }

    fn positive(&mut self, x: f64, path: &str) {
        self.require(x > 0.0 && x.is_finite(), path, format!("must be positive and finite, got {x}"));
    }

    fn unit_open(&mut self, x: f64, path: &str) {
        self.require((0.0..1.0).contains(&x), path, format!("must lie in [0, 1), got {x}"));
    }

    fn list<F: Fn(f64) -> bool>(&mut self, xs: &[f64], path: &str, ok: F, what: &str) {
        for (i, &x) in xs.iter().enumerate() {
            self.require(ok(x), format!("{path}[{i}]"), format!("{what}, got {x}"));
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. When the document has no `kind`
    /// key, `fallback` is used.
    pub fn from_toml(text: &str, fallback: Option<ExperimentKind>) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(s) => {
                    let (l, c) = line_col(text, s.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError {
                message: e.message().trim().to_string(),
                path: None,
                line,
                column,
            }
        })?;
        let has_kind = DeTable::parse(text)
            .ok()
            .is_some_and(|t| t.get_ref().get("kind").is_some());
        if !has_kind {
            if let Some(k) = fallback {
                cfg.kind = k;
            }
        }
        cfg.validate().map_err(|mut e| {
            if let Some(span) = e.path.as_deref().and_then(|p| locate(text, p)) {
                let (l, c) = line_col(text, span.start);
                e.line = Some(l);
                e.column = Some(c);
            }
            e
        })?;
        Ok(cfg)
    }

    pub fn with_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Checks every value against the preconditions of the code that consumes it.
    /// Reports the first violation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut c = Check { errors: Vec::new() };
        c.require(self.replicates >= 1, "replicates", "needs at least one replicate");

        let u = &self.uv;
        c.require(u.n >= 1, "uv.n", "width must be positive");
        c.require(u.samples >= 1, "uv.samples", "needs at least one sample");
        c.require(u.epsilon >= 0.0 && u.epsilon.is_finite(), "uv.epsilon", "must be non-negative");
        c.positive(u.c, "uv.c");
        c.list(&u.gammas, "uv.gammas", |g| g >= 0.0 && g.is_finite(), "must be non-negative");
        c.list(&u.etas, "uv.etas", |e| e > 0.0 && e.is_finite(), "must be positive");
        for (gi, &g) in u.gammas.iter().enumerate() {
            for (ei, &e) in u.etas.iter().enumerate() {
                let beta = 1.0 - u.c * e.powf(g);
                c.require(
                    (0.0..1.0).contains(&beta),
                    format!("uv.etas[{ei}]"),
                    format!("momentum 1 - C eta^gamma = {beta} leaves [0, 1) for gamma = uv.gammas[{gi}]"),
                );
            }
        }
        c.positive(u.stop_fraction, "uv.stop_fraction");
        c.require(u.max_steps >= 1, "uv.max_steps", "must be positive");
        c.require(u.record_every >= 1, "uv.record_every", "must be positive");
        if u.joint_fit.enabled {
            c.require(u.joint_fit.grid.len() >= 3, "uv.joint_fit.grid", "needs at least 3 values");
            c.list(&u.joint_fit.grid, "uv.joint_fit.grid", |x| x > 0.0, "must be positive");
        }

        let s = &self.sensing;
        c.require(s.d >= 1, "sensing.d", "must be positive");
        c.require(s.rank >= 1 && s.rank <= s.d, "sensing.rank", "must lie in 1..=d");
        c.positive(s.eta, "sensing.eta");
        c.require(s.epsilon_sq >= 0.0 && s.epsilon_sq.is_finite(), "sensing.epsilon_sq", "must be non-negative");
        c.list(&s.betas, "sensing.betas", |b| (0.0..1.0).contains(&b), "must lie in [0, 1)");
        c.require(s.steps >= 1, "sensing.steps", "must be positive");
        c.require(s.record_every >= 1, "sensing.record_every", "must be positive");
        c.require(
            s.final_window > 0.0 && s.final_window <= 1.0,
            "sensing.final_window",
            "must lie in (0, 1]",
        );

        let sp = &self.spectral;
        c.positive(sp.eta, "spectral.eta");
        if let Some(b) = sp.beta {
            c.unit_open(b, "spectral.beta");
        } else {
            c.positive(sp.c, "spectral.c");
            let beta = 1.0 - sp.c * sp.eta.powf(sp.gamma);
            c.require((0.0..1.0).contains(&beta), "spectral.gamma", format!("implied momentum {beta} leaves [0, 1)"));
        }
        c.positive(sp.projection_tol, "spectral.projection_tol");

        let d = &self.drift;
        c.require(d.n >= 1, "drift.n", "width must be positive");
        c.require(d.samples >= 1, "drift.samples", "needs at least one sample");
        c.require(d.epsilon >= 0.0 && d.epsilon.is_finite(), "drift.epsilon", "must be non-negative");
        c.positive(d.eta, "drift.eta");
        c.positive(d.c, "drift.c");
        let beta = 1.0 - d.c * d.eta.powf(d.gamma);
        c.require((0.0..1.0).contains(&beta), "drift.gamma", format!("implied momentum {beta} leaves [0, 1)"));
        c.require(d.paths >= 1, "drift.paths", "needs at least one path");
        c.require(d.checkpoints >= 1, "drift.checkpoints", "needs at least one checkpoint");
        c.require(
            d.steps >= d.checkpoints as u64,
            "drift.steps",
            "must be at least the number of checkpoints",
        );
        c.list(&d.scaling_etas, "drift.scaling_etas", |e| e > 0.0 && e.is_finite(), "must be positive");

        let b = &self.beta_star;
        for (v, p) in [
            (b.d_in, "beta_star.d_in"),
            (b.train, "beta_star.train"),
            (b.test, "beta_star.test"),
            (b.width, "beta_star.width"),
            (b.teacher_width, "beta_star.teacher_width"),
        ] {
            c.require(v >= 1, p, "must be positive");
        }
        c.require((0.0..0.5).contains(&b.flip), "beta_star.flip", "must lie in [0, 0.5)");
        c.list(&b.etas, "beta_star.etas", |e| e > 0.0 && e.is_finite(), "must be positive");
        c.list(&b.betas, "beta_star.betas", |x| (0.0..1.0).contains(&x), "must lie in [0, 1)");
        c.require(b.noisy_steps >= 1, "beta_star.noisy_steps", "must be positive");
        c.positive(b.phase1_tol, "beta_star.phase1_tol");
        c.positive(b.projection_eta, "beta_star.projection_eta");
        c.unit_open(b.projection_beta, "beta_star.projection_beta");

        match c.errors.into_iter().next() {
            None => Ok(()),
            Some((path, message)) => Err(ConfigError {
                message,
                path: Some(path),
                line: None,
                column: None,
            }),
        }
    }

    /// Canonical TOML serialization; the config hash is taken over these bytes.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-3, 1e-1, 6);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[5], 1e-1);
        assert!((g[1] / g[0] - 10f64.powf(0.4)).abs() < 1e-12);
    }

    #[test]
    fn empty_document_is_default() {
        let cfg = ExperimentConfig::from_toml("", Some(ExperimentKind::MatrixSensing)).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::MatrixSensing);
        assert_eq!(cfg.sensing, SensingConfig::default());
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), None).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn syntax_error_is_located() {
        let e = ExperimentConfig::from_toml("seed = 1\n[uv]\nn = = 3\n", None).unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.column.is_some());
    }

    #[test]
    fn semantic_error_is_located() {
        let text = "kind = \"uv-timescale\"\n\n[uv]\ngammas = [0.3, -0.5]\n";
        let e = ExperimentConfig::from_toml(text, None).unwrap_err();
        assert_eq!(e.path.as_deref(), Some("uv.gammas[1]"));
        assert_eq!((e.line, e.column), (Some(4), Some(16)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("[uv]\nwidth = 3\n", None).unwrap_err();
        assert_eq!(e.line, Some(2));
    }
}
