use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Generator behind every [`RandomStream`].
pub const STREAM_ALGORITHM: &str = "chacha20";

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Seeded, splittable source of standard normal samples.
///
/// Uniforms come from ChaCha20 keyed by `seed` on stream `stream_index`.
/// Normals use the basic Box-Muller transform on pairs of 53-bit uniforms
/// `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`:
/// `z0 = √(-2 ln u1) cos(2π u2)`, `z1 = √(-2 ln u1) sin(2π u2)`,
/// emitted in that order. The same `(seed, stream_index)` always yields the
/// same sequence on a given platform.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_index: u64,
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl RandomStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_index);
        Self {
            seed,
            stream_index,
            rng,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.rng.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG_53;
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_gaussians(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.gaussian();
        }
    }

    pub fn gaussians(&mut self, count: usize) -> Vec<f64> {
        let mut v = vec![0.0; count];
        self.fill_gaussians(&mut v);
        v
    }
}

/// `count` i.i.d. standard normals drawn from `rng`.
pub fn gaussian_stream(rng: &mut RandomStream, count: usize) -> DVector<f64> {
    DVector::from_vec(rng.gaussians(count))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request() {
        let mut r = RandomStream::new(1, 0);
        assert_eq!(gaussian_stream(&mut r, 0).len(), 0);
    }

    #[test]
    fn moments_of_a_million_draws() {
        let mut r = RandomStream::new(20240601, 3);
        let z = gaussian_stream(&mut r, 1_000_000);
        let n = z.len() as f64;
        let mean = z.sum() / n;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn reproducible_and_stream_split() {
        let a = RandomStream::new(7, 0).gaussians(64);
        let b = RandomStream::new(7, 0).gaussians(64);
        let c = RandomStream::new(7, 1).gaussians(64);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_range() {
        let mut r = RandomStream::new(5, 5);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(r.below(3) < 3);
        }
    }
}
