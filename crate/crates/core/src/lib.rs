//! Heavy-ball SGD with label noise near a manifold of interpolating minima.
//!
//! The crate provides the testbed losses, the optimizer, the linearized
//! spectral analysis of momentum gradient descent, the limiting drift along
//! the zero-loss manifold, and the fitting routines that turn trajectories
//! into timescales and scaling exponents.

pub mod analysis;
pub mod drift;
pub mod error;
pub mod models;
pub mod numerics;
pub mod optimizer;
pub mod spectral;

pub use error::{Error, PhasePoint, Result};
