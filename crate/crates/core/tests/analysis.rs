use proptest::prelude::*;
use sgdm_core::analysis::{
    fit_exponential, fit_line, fit_piecewise, fit_powerlaw, joint_fit_c, FitWindow, GammaSweep,
};
use sgdm_core::numerics::RandomStream;

fn synthetic(c: f64, planted: f64, noise: f64, rng: &mut RandomStream) -> Vec<GammaSweep> {
    [0.3, 0.5, 2.0 / 3.0, 0.8]
        .iter()
        .enumerate()
        .map(|(i, &gamma)| {
            let t0 = 40.0 * (c / planted).powf(i as f64 - 1.5);
            let alpha = f64::max(2.0 * (1.0 - gamma), gamma);
            GammaSweep {
                gamma,
                points: (0..6)
                    .map(|k| {
                        let eta = 10f64.powf(-3.0 + 0.4 * k as f64);
                        (eta, t0 * eta.powf(-alpha) * (1.0 + noise * rng.gaussian()))
                    })
                    .collect(),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exponential_fit_is_scale_equivariant(
        tc in 5.0f64..500.0,
        amp in 0.01f64..100.0,
        k in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let mut rng = RandomStream::new(seed, 0);
        let series: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let t = i as f64 * tc / 20.0;
                (t, amp * (-t / tc).exp() * (1.0 + 0.05 * rng.uniform()))
            })
            .collect();
        let scaled: Vec<(f64, f64)> = series.iter().map(|&(t, v)| (t, v * k)).collect();
        let a = fit_exponential(&series, FitWindow::default()).unwrap();
        let b = fit_exponential(&scaled, FitWindow::default()).unwrap();
        prop_assert!((a.t_c - b.t_c).abs() <= 1e-12 * a.t_c);
        prop_assert!((b.amplitude / a.amplitude / k - 1.0).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.r_squared));
    }

    #[test]
    fn powerlaw_fit_is_exact_on_planted_data(t0 in 0.01f64..1e4, alpha in -2.0f64..3.0, n in 3usize..10) {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let eta = 10f64.powf(-3.0 + 2.0 * i as f64 / (n - 1) as f64);
                (eta, t0 * eta.powf(-alpha))
            })
            .collect();
        let f = fit_powerlaw(&pts).unwrap();
        prop_assert!((f.alpha - alpha).abs() < 1e-10);
        prop_assert!((f.t0 / t0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn kink_fit_never_loses_to_a_line(
        ys in prop::collection::vec(-1.0f64..1.0, 5..15),
    ) {
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (0.5 + 0.03 * i as f64, y)).collect();
        let kink = fit_piecewise(&pts).unwrap();
        let line = fit_line(&pts).unwrap();
        prop_assert!(kink.residual <= line.sse * (1.0 + 1e-9) + 1e-15);
        prop_assert!(kink.beta_star >= pts[0].0 && kink.beta_star <= pts[pts.len() - 1].0);
    }

    #[test]
    fn planted_kink_is_recovered(beta_star in 0.83f64..0.97, seed in any::<u64>()) {
        let mut rng = RandomStream::new(seed, 0);
        let pts: Vec<(f64, f64)> = (0..=20)
            .map(|i| {
                let b = 0.8 + 0.01 * i as f64;
                let d = b - beta_star;
                (b, 0.9 + if d <= 0.0 { 0.5 * d } else { -2.0 * d } + 1e-3 * rng.gaussian())
            })
            .collect();
        let f = fit_piecewise(&pts).unwrap();
        prop_assert!((f.beta_star - beta_star).abs() < 0.01);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn joint_fit_recovers_planted_c_under_noise(planted in 0.1f64..0.4, seed in any::<u64>()) {
        let grid: Vec<f64> = (0..9).map(|i| 0.05 * 1.5f64.powi(i)).collect();
        let fit = joint_fit_c(&grid, 20, |c| {
            let mut rng = RandomStream::new(seed, (c * 1e6) as u64);
            Ok(synthetic(c, planted, 0.05, &mut rng))
        })
        .unwrap();
        prop_assert!((fit.c / planted - 1.0).abs() < 0.1, "fit {} planted {}", fit.c, planted);
    }
}
