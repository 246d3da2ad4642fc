use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use sgdm_core::models::{NoiseMap, QuadraticModel};
use sgdm_core::numerics::{sym_eigendecomposition, RandomStream, SymMatrix};
use sgdm_core::optimizer::{run_trajectory, HyperParams, OptimizerState, Recorder, StopRule};
use sgdm_core::spectral::{extended_jacobian, mode_eigs, rho_bounds, ModeCase};

fn random_psd(d: usize, seed: u64) -> SymMatrix {
    let mut rng = RandomStream::new(seed, 0);
    let a = DMatrix::from_fn(d, d, |_, _| rng.gaussian());
    SymMatrix::symmetrize(&a * a.transpose() / d as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn mode_eigs_match_dense_jacobian_spectrum(
        d in 1usize..=20,
        seed in any::<u64>(),
        beta in 0.0f64..0.99,
        frac in 0.01f64..0.95,
    ) {
        let h = random_psd(d, seed);
        let eig = sym_eigendecomposition(&h).unwrap();
        let top = eig.eigenvalues[0];
        let eta = frac * 2.0 * (1.0 + beta) / top;
        let mut numeric: Vec<Complex<f64>> =
            extended_jacobian(&h, eta, beta).complex_eigenvalues().iter().cloned().collect();
        for &lambda in eig.eigenvalues.iter() {
            let m = mode_eigs(lambda, eta, beta).unwrap();
            for k in [m.kappa_plus, m.kappa_minus] {
                let (idx, dist) = numeric
                    .iter()
                    .enumerate()
                    .map(|(i, z)| (i, (z - k).norm()))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                prop_assert!(dist < 1e-9, "lambda {} kappa {} nearest {}", lambda, k, dist);
                numeric.swap_remove(idx);
            }
        }
    }

    #[test]
    fn block_trace_and_determinant(lambda in 0.0f64..50.0, eta in 1e-4f64..1.0, beta in 0.0f64..0.999) {
        let m = mode_eigs(lambda, eta, beta).unwrap();
        let prod = m.kappa_plus * m.kappa_minus;
        let sum = m.kappa_plus + m.kappa_minus;
        let scale = 1.0 + eta * lambda;
        prop_assert!((prod - Complex::new(beta, 0.0)).norm() < 1e-12 * scale * scale);
        prop_assert!((sum - Complex::new(1.0 + beta - eta * lambda, 0.0)).norm() < 1e-12 * scale);
    }

    #[test]
    fn constructed_eigenvectors_are_eigenvectors(
        d in 1usize..=8,
        seed in any::<u64>(),
        beta in 0.05f64..0.99,
        frac in 0.01f64..0.95,
    ) {
        let h = random_psd(d, seed);
        let eig = sym_eigendecomposition(&h).unwrap();
        let eta = frac * 2.0 * (1.0 + beta) / eig.eigenvalues[0];
        let j = extended_jacobian(&h, eta, beta).map(|x| Complex::new(x, 0.0));
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            let q = eig.eigenvectors.column(i).map(|x| Complex::new(x, 0.0));
            let m = mode_eigs(lambda, eta, beta).unwrap();
            if m.case == ModeCase::Marginal {
                continue;
            }
            for (k, mu) in [(m.kappa_plus, m.mu_plus.unwrap()), (m.kappa_minus, m.mu_minus.unwrap())] {
                let mut v = DVector::zeros(2 * d);
                v.rows_mut(0, d).copy_from(&(&q * mu));
                v.rows_mut(d, d).copy_from(&q);
                let resid = (&j * &v - &v * k).norm() / v.norm();
                prop_assert!(resid < 1e-9, "residual {}", resid);
            }
        }
    }
}

/// Fitted per-step decay of ‖(π, w)‖ for the noiseless quadratic run.
fn measured_decay(lambdas: &[f64], eta: f64, beta: f64, steps: u64, skip: usize) -> f64 {
    let m = QuadraticModel::diagonal(lambdas);
    let start = DVector::from_element(lambdas.len(), 1.0);
    let rec = run_trajectory(
        &m,
        &NoiseMap::none(),
        &HyperParams::explicit(eta, beta).unwrap(),
        OptimizerState::at_rest(start),
        StopRule::max_steps(steps),
        1,
        &Recorder::default(),
        &mut RandomStream::new(0, 0),
    )
    .unwrap();
    let pts: Vec<(f64, f64)> = rec.samples[skip..]
        .iter()
        .map(|s| (s.step as f64, 0.5 * (s.weight_norm_sq + s.momentum_norm_sq).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    -slope
}

#[test]
fn simulated_decay_matches_rho1_in_both_regimes() {
    for (eta, beta, steps, skip) in [(0.01, 0.5, 3_000, 300), (0.1, 0.9, 400, 40)] {
        let lambdas = [1.0, 2.0];
        let r = rho_bounds(&lambdas, eta, beta, None).unwrap();
        let predicted = -r.rho1.ln();
        let measured = measured_decay(&lambdas, eta, beta, steps, skip);
        assert!(
            (measured / predicted - 1.0).abs() < 0.1,
            "eta {eta}, beta {beta}: measured {measured}, predicted {predicted}"
        );
    }
}
