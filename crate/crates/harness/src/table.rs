//! CSV persistence: tables of strings with floats at 17 significant digits,
//! trajectory records and datasets.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sgdm_core::models::{SensingData, UvData};
use sgdm_core::optimizer::TrajectoryRecord;

use crate::error::{HarnessError, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::format(format!("missing column `{name}`")))
    }

    /// Fails unless every name is a column.
    pub fn require(&self, names: &[&str]) -> Result<()> {
        names.iter().try_for_each(|n| self.column(n).map(|_| ()))
    }

    pub fn get<'a>(&self, row: &'a [String], name: &str) -> Result<&'a str> {
        Ok(&row[self.column(name)?])
    }

    /// Empty cells read as `None`.
    pub fn get_f64(&self, row: &[String], name: &str) -> Result<Option<f64>> {
        let s = self.get(row, name)?;
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| HarnessError::format(format!("column `{name}`: `{s}` is not a number")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
        Ok(())
    }

    /// Reads a CSV with a header row. A zero-byte file is an empty table.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 6] =
    ["step", "loss", "weight_norm_sq", "momentum_norm_sq", "trace_hessian", "test_error"];

/// One row per recorded sample, each prefixed by `prefix`.
pub fn trajectory_rows(prefix: &[String], record: &TrajectoryRecord) -> Vec<Vec<String>> {
    record
        .samples
        .iter()
        .map(|s| {
            let mut row = prefix.to_vec();
            row.extend([
                s.step.to_string(),
                fmt_f64(s.loss),
                fmt_f64(s.weight_norm_sq),
                fmt_f64(s.momentum_norm_sq),
                fmt_opt(s.trace_hessian),
                fmt_opt(s.test_error),
            ]);
            row
        })
        .collect()
}

pub fn write_uv_dataset(path: &Path, data: &UvData) -> Result<()> {
    let mut t = Table::new(&["index", "x", "y"]);
    for (i, (x, y)) in data.inputs.iter().zip(&data.labels).enumerate() {
        t.push(vec![i.to_string(), fmt_f64(*x), fmt_f64(*y)]);
    }
    t.write(path)
}

pub fn read_uv_dataset(path: &Path) -> Result<UvData> {
    let t = Table::read(path)?;
    t.require(&["index", "x", "y"])?;
    let mut data = UvData {
        inputs: Vec::new(),
        labels: Vec::new(),
    };
    for row in &t.rows {
        let x = t.get_f64(row, "x")?.ok_or_else(|| HarnessError::format("empty x"))?;
        let y = t.get_f64(row, "y")?.ok_or_else(|| HarnessError::format("empty y"))?;
        data.inputs.push(x);
        data.labels.push(y);
    }
    Ok(data)
}

#[derive(Serialize, Deserialize)]
struct SensingManifest {
    d: usize,
    r: usize,
    p: usize,
    labels: Vec<f64>,
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| fmt_f64(m[(i, j)])))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

fn read_matrix(path: &Path, d: usize) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut vals = Vec::with_capacity(d * d);
    for rec in r.records() {
        for v in rec?.iter() {
            vals.push(
                v.parse::<f64>()
                    .map_err(|_| HarnessError::format(format!("{}: `{v}` is not a number", path.display())))?,
            );
        }
    }
    if vals.len() != d * d {
        return Err(HarnessError::format(format!(
            "{}: expected {} entries, found {}",
            path.display(),
            d * d,
            vals.len()
        )));
    }
    Ok(DMatrix::from_row_slice(d, d, &vals))
}

/// `manifest.toml` (d, r, P, labels), `target.csv`, and `a_XXXXX.csv` per
/// sensing matrix, all row-major.
pub fn write_sensing_dataset(dir: &Path, data: &SensingData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let manifest = SensingManifest {
        d: data.target.nrows(),
        r: data.rank,
        p: data.sensing.len(),
        labels: data.labels.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| HarnessError::format(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| HarnessError::io(path, e))?;
    write_matrix(&dir.join("target.csv"), &data.target)?;
    for (i, a) in data.sensing.iter().enumerate() {
        write_matrix(&dir.join(format!("a_{i:05}.csv")), a)?;
    }
    Ok(())
}

pub fn read_sensing_dataset(dir: &Path) -> Result<SensingData> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let m: SensingManifest = toml::from_str(&text).map_err(|e| HarnessError::format(e.to_string()))?;
    if m.labels.len() != m.p {
        return Err(HarnessError::format("manifest label count differs from P"));
    }
    let sensing = (0..m.p)
        .map(|i| read_matrix(&dir.join(format!("a_{i:05}.csv")), m.d))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensingData {
        sensing,
        labels: m.labels,
        target: read_matrix(&dir.join("target.csv"), m.d)?,
        rank: m.r,
    })
}
