use crate::numerics::RandomStream;
use crate::{Error, Result};

/// How training labels are perturbed at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// `y → y + ε ξ` with `ξ ~ N(0, 1)` i.i.d. per label.
    Gaussian,
    /// Binary labels stored as their expectation `(1 - 2p) y` with `y = ±1`;
    /// each step draws `-y` with probability `p` and `y` otherwise.
    LabelFlip { prob: f64 },
}

/// Label-noise specification: the kind and its amplitude `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMap {
    pub kind: NoiseKind,
    pub epsilon: f64,
}

impl NoiseMap {
    pub fn gaussian(epsilon: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            epsilon,
        }
    }

    pub fn none() -> Self {
        Self::gaussian(0.0)
    }

    pub fn label_flip(prob: f64) -> Self {
        Self {
            kind: NoiseKind::LabelFlip { prob },
            epsilon: (4.0 * prob * (1.0 - prob)).sqrt(),
        }
    }

    pub fn is_silent(&self) -> bool {
        match self.kind {
            NoiseKind::Gaussian => self.epsilon == 0.0,
            NoiseKind::LabelFlip { prob } => prob == 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::Gaussian if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) => {
                Err(Error::domain("noise amplitude must be finite and non-negative"))
            }
            NoiseKind::LabelFlip { prob } if !(0.0..0.5).contains(&prob) => {
                Err(Error::domain("label flip probability must lie in [0, 0.5)"))
            }
            _ => Ok(()),
        }
    }
}

/// Fresh perturbation of every clean label, written into `out`.
///
/// Draws nothing from `rng` when the noise is silent.
pub fn noisy_labels(clean: &[f64], noise: &NoiseMap, rng: &mut RandomStream, out: &mut [f64]) {
    debug_assert_eq!(clean.len(), out.len());
    if noise.is_silent() {
        out.copy_from_slice(clean);
        return;
    }
    match noise.kind {
        NoiseKind::Gaussian => {
            for (o, &y) in out.iter_mut().zip(clean) {
                *o = y + noise.epsilon * rng.gaussian();
            }
        }
        NoiseKind::LabelFlip { prob } => {
            let shrink = 1.0 - 2.0 * prob;
            for (o, &y) in out.iter_mut().zip(clean) {
                let truth = y / shrink;
                *o = if rng.uniform() < prob { -truth } else { truth };
            }
        }
    }
}
