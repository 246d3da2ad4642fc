use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sgdm_core::models::{generate_uv, Model, NoiseMap, QuadraticModel, UvSpec, VectorUvModel};
use sgdm_core::numerics::RandomStream;
use sgdm_core::optimizer::{
    run_trajectory, HyperParams, Observable, OptimizerState, Recorder, StopRule,
};

fn uv_model(n: usize, p: usize, seed: u64) -> VectorUvModel {
    let data = generate_uv(&UvSpec { p }, &mut RandomStream::new(seed, 0)).unwrap();
    VectorUvModel::from_data(n, &data).unwrap()
}

/// A point on the UV zero-loss set: u ⟂ v.
fn uv_point(n: usize) -> DVector<f64> {
    let mut w = DVector::zeros(2 * n);
    for i in 0..n {
        w[i] = if i % 2 == 0 { 1.0 } else { 0.0 };
        w[n + i] = if i % 2 == 1 { 1.0 } else { 0.0 };
    }
    w
}

#[test]
fn identical_seeds_give_identical_records() {
    let m = uv_model(10, 5, 1);
    let h = HyperParams::scaled(0.01, 0.5, 0.2).unwrap();
    let run = |seed| {
        run_trajectory(
            &m,
            &NoiseMap::gaussian(0.5),
            &h,
            OptimizerState::at_rest(uv_point(10)),
            StopRule::max_steps(2_000),
            10,
            &Recorder {
                trace_hessian: true,
                test_error: None,
            },
            &mut RandomStream::new(seed, 3),
        )
        .unwrap()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7).final_state, run(8).final_state);
}

#[test]
fn record_steps_strictly_increase() {
    let m = uv_model(4, 5, 2);
    let h = HyperParams::explicit(0.05, 0.5).unwrap();
    let rec = run_trajectory(
        &m,
        &NoiseMap::gaussian(0.5),
        &h,
        OptimizerState::at_rest(uv_point(4)),
        StopRule::max_steps(1_005),
        10,
        &Recorder::default(),
        &mut RandomStream::new(0, 0),
    )
    .unwrap();
    assert!(rec.samples.windows(2).all(|p| p[0].step < p[1].step));
    assert_eq!(rec.samples.last().unwrap().step, 1_005);
    assert!(rec.samples.iter().all(|s| s.loss.is_finite()));
}

#[test]
fn weight_norm_stop_rule_fires() {
    let m = uv_model(10, 5, 3);
    let h = HyperParams::scaled(0.05, 0.5, 0.2).unwrap();
    let rec = run_trajectory(
        &m,
        &NoiseMap::gaussian(0.5),
        &h,
        OptimizerState::at_rest(uv_point(10)),
        StopRule::observable_below(Observable::WeightNormSq, 1.0, 2_000_000),
        10,
        &Recorder::default(),
        &mut RandomStream::new(5, 0),
    )
    .unwrap();
    assert!(rec.final_state.w.norm_squared() < 1.0);
    assert!(rec.final_state.k < 2_000_000);
}

#[test]
fn label_noise_matches_sigma_covariance() {
    let n = 3;
    let m = uv_model(n, 5, 4);
    let w = uv_point(n);
    let eps = 0.5;
    let noise = NoiseMap::gaussian(eps);
    let clean = m.gradient(&w).unwrap();
    let sigma = m.noise_function(&w).unwrap();
    let expected = &sigma * sigma.transpose() * (eps * eps);

    let mut rng = RandomStream::new(11, 0);
    let mut labels = vec![0.0; m.labels().len()];
    let mut g = vec![0.0; m.dim()];
    let steps = 10_000;
    let mut cov = DMatrix::zeros(m.dim(), m.dim());
    for _ in 0..steps {
        sgdm_core::models::noisy_labels(m.labels(), &noise, &mut rng, &mut labels);
        m.gradient_with_labels(w.as_slice(), &labels, &mut g);
        let d = DVector::from_column_slice(&g) - &clean;
        cov += &d * d.transpose();
    }
    cov /= steps as f64;
    let rel = (&cov - &expected).norm() / expected.norm();
    assert!(rel < 0.05, "relative covariance error {rel}");
}

/// Stationary variance of the AR(2) recursion for `½ λ x²` with gradient
/// noise of variance `λ ε²`.
fn stationary_variance(eta: f64, beta: f64, lambda: f64, eps: f64) -> f64 {
    eta * eps * eps * (1.0 + beta) / ((1.0 - beta) * (2.0 * (1.0 + beta) - eta * lambda))
}

#[test]
fn transverse_second_moment_scales_with_eta_over_one_minus_beta() {
    let m = QuadraticModel::isotropic(1, 1.0);
    let beta = 0.9;
    let etas = [0.005, 0.015, 0.05];
    let mut logs = Vec::new();
    for (i, &eta) in etas.iter().enumerate() {
        let h = HyperParams::explicit(eta, beta).unwrap();
        let rec = run_trajectory(
            &m,
            &NoiseMap::gaussian(1.0),
            &h,
            OptimizerState::at_rest(DVector::zeros(1)),
            StopRule::max_steps(400_000),
            1,
            &Recorder::default(),
            &mut RandomStream::new(21, i as u64),
        )
        .unwrap();
        let tail = &rec.samples[20_000..];
        let mean = tail.iter().map(|s| s.weight_norm_sq).sum::<f64>() / tail.len() as f64;
        let exact = stationary_variance(eta, beta, 1.0, 1.0);
        assert!((mean / exact - 1.0).abs() < 0.1, "eta {eta}: {mean} vs {exact}");
        logs.push((eta.ln(), mean.ln()));
    }
    let n = logs.len() as f64;
    let (mx, my) = (
        logs.iter().map(|p| p.0).sum::<f64>() / n,
        logs.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / logs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope - 1.0).abs() < 0.1, "exponent {slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plain_gd_is_monotone_on_quadratics(
        lambdas in prop::collection::vec(0.1f64..5.0, 1..5),
        start in prop::collection::vec(-3.0f64..3.0, 5),
        frac in 0.05f64..0.95,
    ) {
        let d = lambdas.len();
        let m = QuadraticModel::diagonal(&lambdas);
        let top = lambdas.iter().cloned().fold(0.0, f64::max);
        let h = HyperParams::explicit(frac * 2.0 / top, 0.0).unwrap();
        let rec = run_trajectory(
            &m,
            &NoiseMap::none(),
            &h,
            OptimizerState::at_rest(DVector::from_column_slice(&start[..d])),
            StopRule::max_steps(300),
            1,
            &Recorder::default(),
            &mut RandomStream::new(0, 0),
        ).unwrap();
        for p in rec.samples.windows(2) {
            prop_assert!(p[1].loss <= p[0].loss * (1.0 + 1e-12));
        }
    }

    #[test]
    fn noiseless_dynamics_leave_the_manifold_invariant(beta in 0.0f64..0.99, eta in 0.001f64..0.5) {
        let m = uv_model(4, 6, 9);
        let w = uv_point(4);
        let h = HyperParams::explicit(eta, beta).unwrap();
        let rec = run_trajectory(
            &m,
            &NoiseMap::none(),
            &h,
            OptimizerState::at_rest(w.clone()),
            StopRule::max_steps(50),
            5,
            &Recorder::default(),
            &mut RandomStream::new(0, 0),
        ).unwrap();
        prop_assert!(rec.samples.iter().all(|s| s.loss == 0.0));
        prop_assert_eq!(rec.final_state.w, w);
    }
}
