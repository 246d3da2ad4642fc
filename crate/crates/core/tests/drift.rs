use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sgdm_core::drift::{
    integrate_drift, label_noise_drift, limiting_drift, tangent_projectors, uv_drift_rate,
    DriftMode, DriftParams, IntegrationOptions, ManifoldChart,
};
use sgdm_core::models::{generate_sensing, MatrixSensingModel, Model, SensingSpec, VectorUvModel};
use sgdm_core::numerics::{RandomStream, SymMatrix, DEFAULT_RANK_TOL};

fn params(eta: f64, gamma: f64, c: f64, epsilon: f64) -> DriftParams {
    DriftParams {
        eta,
        gamma,
        c,
        epsilon,
    }
}

fn uv_model(n: usize, p: usize, seed: u64) -> VectorUvModel {
    let mut rng = RandomStream::new(seed, 0);
    VectorUvModel::new(n, rng.gaussians(p), vec![0.0; p]).unwrap()
}

/// Random `(u, v)` with `u ⟂ v`.
fn uv_on_manifold(n: usize, rng: &mut RandomStream) -> DVector<f64> {
    let u = DVector::from_vec(rng.gaussians(n));
    let mut v = DVector::from_vec(rng.gaussians(n));
    v -= &u * (u.dot(&v) / u.norm_squared());
    let mut w = DVector::zeros(2 * n);
    w.rows_mut(0, n).copy_from(&u);
    w.rows_mut(n, n).copy_from(&v);
    w
}

fn sensing_model(seed: u64) -> MatrixSensingModel {
    let data = generate_sensing(&SensingSpec { d: 4, r: 1, p: 10 }, &mut RandomStream::new(seed, 0)).unwrap();
    MatrixSensingModel::from_data(&data).unwrap()
}

/// `U` random and `V = U⁻¹ X*`, so that `UV = X*` exactly.
fn sensing_on_manifold(m: &MatrixSensingModel, rng: &mut RandomStream) -> DVector<f64> {
    let d = m.side();
    let u = DMatrix::from_fn(d, d, |_, _| rng.gaussian()) + DMatrix::identity(d, d) * 2.0;
    let v = u.clone().try_inverse().unwrap() * m.target().unwrap();
    MatrixSensingModel::pack(&u, &v)
}

fn random_range_matrix(chart: &ManifoldChart, rng: &mut RandomStream) -> DMatrix<f64> {
    let d = chart.dim();
    let a = DMatrix::from_fn(d, d, |_, _| rng.gaussian());
    let pt = chart.p_t.as_matrix();
    pt * (&a + a.transpose()) * pt
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ltilde_roundtrip_on_range(
        d in 2usize..=10,
        kernel in 0usize..3,
        seed in any::<u64>(),
        gamma_idx in 0usize..3,
        eta_idx in 0usize..2,
        c in 0.05f64..2.0,
    ) {
        let mut rng = RandomStream::new(seed, 0);
        let rank = d.saturating_sub(kernel).max(1);
        let a = DMatrix::from_fn(d, rank, |_, _| rng.gaussian());
        let h = SymMatrix::symmetrize(&a * a.transpose());
        let chart = tangent_projectors(DVector::zeros(d), h, DEFAULT_RANK_TOL).unwrap();
        let p = params([1e-3, 1e-1][eta_idx], [0.3, 0.5, 0.8][gamma_idx], c, 1.0);
        let s = random_range_matrix(&chart, &mut rng);
        let back = chart.ltilde_inverse(&chart.ltilde_apply(&s, &p).unwrap(), &p).unwrap();
        prop_assert!((back.as_matrix() - &s).norm() <= 1e-10 * s.norm());
        let forward = chart.ltilde_apply(chart.ltilde_inverse(&s, &p).unwrap().as_matrix(), &p).unwrap();
        prop_assert!((forward - &s).norm() <= 1e-10 * s.norm());
        let half = chart.ltilde_inverse(chart.hessian.as_matrix(), &p).unwrap();
        prop_assert!((half.as_matrix() - chart.p_t.as_matrix() * 0.5).amax() < 1e-12);
    }

    #[test]
    fn chart_projectors_are_complementary(seed in any::<u64>()) {
        let m = uv_model(5, 6, seed);
        let w = uv_on_manifold(5, &mut RandomStream::new(seed, 1));
        let c = ManifoldChart::at(&m, &w, DEFAULT_RANK_TOL).unwrap();
        let (pl, pt) = (c.p_l.as_matrix(), c.p_t.as_matrix());
        let id = DMatrix::identity(10, 10);
        prop_assert!((pl + pt - &id).amax() < 1e-12);
        prop_assert!((pl * pl - pl).amax() < 1e-12);
        let hh = c.hessian.as_matrix() * c.h_dagger.as_matrix();
        prop_assert!((hh - pt).amax() < 1e-9);
        prop_assert!(c.warnings.is_empty());
    }

    #[test]
    fn label_noise_drift_is_tangent(seed in any::<u64>(), gamma in 0.0f64..1.0, eta in 1e-3f64..0.5) {
        let m = uv_model(6, 5, seed);
        let w = uv_on_manifold(6, &mut RandomStream::new(seed, 1));
        let c = ManifoldChart::at(&m, &w, DEFAULT_RANK_TOL).unwrap();
        let f = label_noise_drift(&m, &c, m.noise_scale(), &params(eta, gamma, 0.3, 0.5)).unwrap();
        let leak = (c.p_t.as_matrix() * &f.drift).norm();
        prop_assert!(leak <= 1e-8 * f.drift.norm());
    }

    #[test]
    fn fluctuation_drift_is_tangent_for_any_covariance(seed in any::<u64>(), gamma in 0.0f64..1.0) {
        let mut rng = RandomStream::new(seed, 2);
        let m = uv_model(4, 5, seed);
        let w = uv_on_manifold(4, &mut rng);
        let c = ManifoldChart::at(&m, &w, DEFAULT_RANK_TOL).unwrap();
        let a = DMatrix::from_fn(8, 8, |_, _| rng.gaussian());
        let sigma = SymMatrix::symmetrize(&a * a.transpose());
        let f = limiting_drift(&m, &c, &sigma, &params(0.05, gamma, 0.5, 1.0)).unwrap();
        let part = f.fluctuation_part();
        prop_assert!((c.p_t.as_matrix() * &part).norm() <= 1e-8 * part.norm());
        // the Σ_LL term is the curvature correction and points off the manifold
        prop_assert!((c.p_l.as_matrix() * &f.ll).norm() <= 1e-8 * f.ll.norm().max(1e-300));
    }
}

#[test]
fn uv_chart_has_rank_one_along_jacobian() {
    let n = 4;
    let m = uv_model(n, 5, 3);
    let w = uv_on_manifold(n, &mut RandomStream::new(3, 1));
    let c = ManifoldChart::at(&m, &w, DEFAULT_RANK_TOL).unwrap();
    assert_eq!(c.rank, 1);
    let mut q = DVector::zeros(2 * n);
    q.rows_mut(0, n).copy_from(&w.rows(n, n));
    q.rows_mut(n, n).copy_from(&w.rows(0, n));
    q /= q.norm();
    assert!((c.p_t.as_matrix() - &q * q.transpose()).amax() < 1e-12);
}

#[test]
fn corollary_matches_general_drift() {
    let p = params(0.02, 0.6, 0.3, 0.5);
    let mut rng = RandomStream::new(4, 0);
    let uv = uv_model(5, 5, 4);
    let sensing = sensing_model(5);
    for _ in 0..5 {
        let w = uv_on_manifold(5, &mut rng);
        let c = ManifoldChart::at(&uv, &w, DEFAULT_RANK_TOL).unwrap();
        let s = uv.noise_function(&w).unwrap();
        let general = limiting_drift(&uv, &c, &SymMatrix::symmetrize(&s * s.transpose()), &p).unwrap();
        let closed = label_noise_drift(&uv, &c, uv.noise_scale(), &p).unwrap();
        assert!(general.ll.norm() <= 1e-12 * general.drift.norm());
        assert!(general.tl.norm() <= 1e-12 * general.drift.norm());
        let rel = (&general.drift - &closed.drift).norm() / closed.drift.norm();
        assert!(rel < 1e-8, "UV relative gap {rel:e}");

        let w = sensing_on_manifold(&sensing, &mut rng);
        let c = ManifoldChart::at(&sensing, &w, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(c.rank, sensing.measurements());
        let s = sensing.noise_function(&w).unwrap();
        let general = limiting_drift(&sensing, &c, &SymMatrix::symmetrize(&s * s.transpose()), &p).unwrap();
        let closed = label_noise_drift(&sensing, &c, sensing.noise_scale(), &p).unwrap();
        let rel = (&general.drift - &closed.drift).norm() / closed.drift.norm();
        assert!(rel < 1e-8, "sensing relative gap {rel:e}");
    }
}

#[test]
fn uv_drift_is_the_closed_form_decay() {
    let (n, pn) = (10, 5);
    let m = uv_model(n, pn, 6);
    let mut rng = RandomStream::new(6, 1);
    let (eta, gamma, cc, eps) = (0.01, 2.0 / 3.0, 0.171, 0.5);
    let p = params(eta, gamma, cc, eps);
    let rate = uv_drift_rate(eta, gamma, cc, eps, m.mu2(), n, pn);
    for _ in 0..3 {
        let w = uv_on_manifold(n, &mut rng);
        let c = ManifoldChart::at(&m, &w, DEFAULT_RANK_TOL).unwrap();
        let s = m.noise_function(&w).unwrap();
        let f = limiting_drift(&m, &c, &SymMatrix::symmetrize(&s * s.transpose()), &p).unwrap();
        let expected = c.p_l.as_matrix() * &w * (-rate);
        assert!((&f.drift - &expected).norm() < 1e-6 * expected.norm());
    }
}

#[test]
fn sensing_drift_matches_covariance_form_and_numeric_trace_gradient() {
    let m = sensing_model(7);
    let mut rng = RandomStream::new(7, 1);
    let (eta, gamma, cc, eps) = (0.1, 2.0 / 3.0, 0.2, 0.3);
    let p = params(eta, gamma, cc, eps);
    let (d, pn) = (m.side() as f64, m.measurements() as f64);
    for _ in 0..3 {
        let w = sensing_on_manifold(&m, &mut rng);
        let c = ManifoldChart::at(&m, &w, DEFAULT_RANK_TOL).unwrap();
        let f = label_noise_drift(&m, &c, m.noise_scale(), &p).unwrap();
        let k = 2.0 * eps * eps * eta.powf(2.0 - 2.0 * gamma) / (cc * cc * pn * d * d);
        let expected = c.p_l.as_matrix() * m.covariance_apply(w.as_slice()) * (-k);
        assert!((&f.drift - &expected).norm() < 1e-10 * expected.norm());

        let h = 1e-5;
        let numeric = DVector::from_fn(w.len(), |i, _| {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            (m.trace_hessian(&wp).unwrap() - m.trace_hessian(&wm).unwrap()) / (2.0 * h)
        });
        let from_numeric = c.p_l.as_matrix() * numeric * (-0.25 * eps * eps * p.drift_scale() * m.noise_scale());
        assert!((&f.drift - &from_numeric).norm() < 1e-6 * expected.norm());
    }
}

#[test]
fn drift_scales_as_eta_power() {
    let m = uv_model(6, 5, 8);
    let w = uv_on_manifold(6, &mut RandomStream::new(8, 1));
    let c = ManifoldChart::at(&m, &w, DEFAULT_RANK_TOL).unwrap();
    let s = m.noise_function(&w).unwrap();
    let sigma = SymMatrix::symmetrize(&s * s.transpose());
    for gamma in [0.3, 0.5, 2.0 / 3.0, 0.8] {
        let pts: Vec<(f64, f64)> = [1e-3, 2e-3, 5e-3, 1e-2]
            .iter()
            .map(|&eta| {
                let f = limiting_drift(&m, &c, &sigma, &params(eta, gamma, 0.2, 0.5)).unwrap();
                (eta.ln(), f.drift.norm().ln())
            })
            .collect();
        let slope = (pts[3].1 - pts[0].1) / (pts[3].0 - pts[0].0);
        assert!((slope - (2.0 - 2.0 * gamma)).abs() < 0.02, "gamma {gamma}: slope {slope}");
    }
}

#[test]
fn noiseless_integration_stays_put() {
    let m = uv_model(4, 5, 9);
    let w = uv_on_manifold(4, &mut RandomStream::new(9, 1));
    let path = integrate_drift(
        &m,
        &w,
        &params(0.01, 0.5, 0.2, 0.0),
        &IntegrationOptions::new(50.0, DriftMode::LabelNoise { c: m.noise_scale() }),
        &mut RandomStream::new(0, 0),
    )
    .unwrap();
    assert!(path.points.iter().all(|p| p == &w));
}

#[test]
fn integrated_uv_norm_decays_at_twice_the_drift_rate() {
    let (n, pn) = (10, 5);
    let m = uv_model(n, pn, 10);
    let w = uv_on_manifold(n, &mut RandomStream::new(10, 1));
    let (eta, gamma, cc, eps) = (0.01, 2.0 / 3.0, 0.2, 0.5);
    let rate = uv_drift_rate(eta, gamma, cc, eps, m.mu2(), n, pn);
    let horizon = 3.0 / rate;
    let mut opts = IntegrationOptions::new(horizon, DriftMode::General);
    opts.dt = horizon / 200.0;
    let path = integrate_drift(&m, &w, &params(eta, gamma, cc, eps), &opts, &mut RandomStream::new(1, 0)).unwrap();
    let last = path.points.last().unwrap();
    let t = *path.times.last().unwrap();
    let measured = -(last.norm_squared() / w.norm_squared()).ln() / t;
    assert!((measured / (2.0 * rate) - 1.0).abs() < 0.1, "measured {measured}, predicted {}", 2.0 * rate);
    assert!(last.norm_squared() < 0.01 * w.norm_squared());
    assert!(m.loss(last).unwrap() < 1e-12);
}

#[test]
fn sgdm_longitudinal_velocity_matches_label_noise_drift() {
    use sgdm_core::models::NoiseMap;
    use sgdm_core::optimizer::{project_to_manifold, HyperParams, OptimizerState, ProjectionOptions, Sgdm};

    let (n, pn) = (10, 5);
    let m = uv_model(n, pn, 11);
    let w0 = uv_on_manifold(n, &mut RandomStream::new(11, 1));
    let (eta, gamma, cc, eps) = (0.01, 0.5, 0.2, 0.5);
    let hyper = HyperParams::scaled(eta, gamma, cc).unwrap();
    let (replicates, steps) = (200u64, 500u64);
    let mut mean_end = DVector::zeros(2 * n);
    for r in 0..replicates {
        let mut rng = RandomStream::new(12, r);
        let mut stepper = Sgdm::new(&m, hyper, NoiseMap::gaussian(eps)).unwrap();
        let mut state = OptimizerState::at_rest(w0.clone());
        for _ in 0..steps {
            stepper.step(&mut state, &mut rng).unwrap();
        }
        let limit = project_to_manifold(
            &m,
            &state.w,
            1e-14,
            &ProjectionOptions {
                beta: hyper.beta,
                eta: Some(eta),
                max_steps: 1_000_000,
                momentum: Some(state.pi.clone()),
            },
        )
        .unwrap();
        mean_end += limit.w;
    }
    mean_end /= replicates as f64;
    let measured = (&mean_end - &w0) / steps as f64;

    let c = ManifoldChart::at(&m, &w0, DEFAULT_RANK_TOL).unwrap();
    let f = label_noise_drift(&m, &c, m.noise_scale(), &params(eta, gamma, cc, eps)).unwrap();
    let rate = uv_drift_rate(eta, gamma, cc, eps, m.mu2(), n, pn);
    let predicted = &w0 * (((-rate * steps as f64).exp() - 1.0) / steps as f64);
    assert!((&f.drift + &w0 * rate).norm() < 1e-10 * f.drift.norm());
    let rel = (&measured - &predicted).norm() / predicted.norm();
    eprintln!("measured {:.4e} predicted {:.4e} rel {rel:.3}", measured.norm(), predicted.norm());
    assert!(rel < 0.25, "relative error {rel}");
}
