//! Deterministic parallel execution of independent sweep cells.

use std::fmt;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Stable 64-bit stream index for a cell, from the SHA-256 of its coordinates.
pub fn stream_index(coords: &str) -> u64 {
    let digest = Sha256::digest(coords.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Coordinate key with floats in round-trip form, so equal values always hash equally.
pub fn coords(kind: &str, parts: &[(&str, f64)], replicate: usize) -> String {
    let mut key = kind.to_string();
    for (name, v) in parts {
        key.push_str(&format!("/{name}={v:e}"));
    }
    key.push_str(&format!("/rep={replicate}"));
    key
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellStatus {
    Completed,
    Diverged,
    Failed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Completed => "completed",
            CellStatus::Diverged => "diverged",
            CellStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "completed" => Some(CellStatus::Completed),
            "diverged" => Some(CellStatus::Diverged),
            "failed" => Some(CellStatus::Failed),
            _ => None,
        }
    }
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps `work` over `cells` on `parallelism` threads. Results come back in
/// cell order whatever the schedule, so anything built from them is
/// independent of the thread count.
pub fn run_cells<T, R, F>(cells: &[T], parallelism: usize, work: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if parallelism <= 1 {
        return Ok(cells.iter().map(work).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(&work).collect()))
}
