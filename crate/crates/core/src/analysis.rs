//! Fits that turn trajectories into timescales, exponents and kinks.

use crate::{Error, Result};

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Sum of squared residuals.
    pub sse: f64,
    pub r_squared: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!("a line needs 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("all abscissae coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LineFit {
        slope,
        intercept,
        sse,
        r_squared,
    })
}

/// Which part of a series enters [`fit_exponential`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitWindow {
    /// Drop this leading fraction of the samples.
    SkipFraction(f64),
    /// Keep samples with `t_start <= t <= t_end`.
    Range(f64, f64),
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::SkipFraction(0.2)
    }
}

/// `value ≈ amplitude · e^{-t / t_c}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFit {
    pub t_c: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

pub const MIN_EXP_POINTS: usize = 10;

/// Least-squares line through `(t, ln value)`; `T_c = -1 / slope`.
pub fn fit_exponential(series: &[(f64, f64)], window: FitWindow) -> Result<ExpFit> {
    let kept: Vec<(f64, f64)> = match window {
        FitWindow::SkipFraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::domain(format!("skip fraction {f} outside [0, 1)")));
            }
            let skip = (series.len() as f64 * f).floor() as usize;
            series[skip..].to_vec()
        }
        FitWindow::Range(a, b) => series.iter().cloned().filter(|p| p.0 >= a && p.0 <= b).collect(),
    };
    if kept.len() < MIN_EXP_POINTS {
        return Err(Error::InsufficientData(format!(
            "exponential fit needs {MIN_EXP_POINTS} points in the window, got {}",
            kept.len()
        )));
    }
    if let Some(bad) = kept.iter().find(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Error::domain(format!("value {} at t = {} is not positive", bad.1, bad.0)));
    }
    let logs: Vec<(f64, f64)> = kept.iter().map(|p| (p.0, p.1.ln())).collect();
    let line = fit_line(&logs)?;
    let span = kept.last().unwrap().0 - kept[0].0;
    // a slope this small cannot be told apart from a flat series
    if !(line.slope < 0.0) || (-line.slope * span.abs()) < 1e-9 {
        return Err(Error::UnboundedTimescale { slope: line.slope });
    }
    Ok(ExpFit {
        t_c: -1.0 / line.slope,
        amplitude: line.intercept.exp(),
        r_squared: line.r_squared,
        window: (kept[0].0, kept.last().unwrap().0),
    })
}

/// `T_c ≈ t0 · η^{-alpha}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub t0: f64,
    pub alpha: f64,
    /// Root-mean-square residual in `ln T_c`.
    pub residual: f64,
}

pub fn fit_powerlaw(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("power law needs 3 points, got {}", points.len())));
    }
    if let Some(bad) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(Error::domain(format!("point ({}, {}) is not positive", bad.0, bad.1)));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|p| (p.0.ln(), p.1.ln())).collect();
    let line = fit_line(&logs)?;
    Ok(PowerLawFit {
        t0: line.intercept.exp(),
        alpha: -line.slope,
        residual: (line.sse / points.len() as f64).sqrt(),
    })
}

/// Timescales measured at one `γ`: `(η, T_c)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSweep {
    pub gamma: f64,
    pub points: Vec<(f64, f64)>,
}

/// Standard deviation of `ln T₀` across the sweeps.
pub fn t0_spread(sweeps: &[GammaSweep]) -> Result<f64> {
    if sweeps.len() < 2 {
        return Err(Error::InsufficientData("T0 spread needs at least 2 gamma values".into()));
    }
    let logs = sweeps
        .iter()
        .map(|s| fit_powerlaw(&s.points).map(|f| f.t0.ln()))
        .collect::<Result<Vec<_>>>()?;
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    Ok((logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointFit {
    pub c: f64,
    pub spread: f64,
    /// Every `(C, spread)` evaluated, grid first, then refinement.
    pub profile: Vec<(f64, f64)>,
    /// The grid profile has more than one local minimum.
    pub ambiguous: bool,
}

/// Finds the `C` at which the fitted prefactors `T₀` agree across `γ`.
///
/// `sweep(C)` returns the measured timescales for every `γ` at that `C`. The
/// spread of `ln T₀` is scanned on `grid` and refined by golden-section search
/// in `ln C` between the neighbours of the best grid point.
pub fn joint_fit_c<F>(grid: &[f64], refine_iterations: usize, mut sweep: F) -> Result<JointFit>
where
    F: FnMut(f64) -> Result<Vec<GammaSweep>>,
{
    if grid.len() < 3 {
        return Err(Error::InsufficientData("C grid needs at least 3 points".into()));
    }
    let mut grid = grid.to_vec();
    if grid.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::domain("C grid must be positive"));
    }
    grid.sort_by(f64::total_cmp);
    let mut objective = |c: f64| -> Result<f64> {
        let sweeps = sweep(c)?;
        if sweeps.len() < 2 || sweeps.iter().any(|s| s.points.len() < 3) {
            return Err(Error::InsufficientData(
                "joint fit needs 2 gamma values with 3 eta points each".into(),
            ));
        }
        t0_spread(&sweeps)
    };
    let mut profile = Vec::new();
    for &c in &grid {
        profile.push((c, objective(c)?));
    }
    let local_minima = (0..profile.len())
        .filter(|&i| {
            let left = i == 0 || profile[i - 1].1 > profile[i].1;
            let right = i + 1 == profile.len() || profile[i + 1].1 > profile[i].1;
            left && right
        })
        .count();
    let best = (0..profile.len())
        .min_by(|&a, &b| profile[a].1.total_cmp(&profile[b].1))
        .unwrap();
    let mut lo = grid[best.saturating_sub(1)].ln();
    let mut hi = grid[(best + 1).min(grid.len() - 1)].ln();
    let (mut best_c, mut best_s) = profile[best];
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f64::NAN;
    let mut f2 = f64::NAN;
    for it in 0..refine_iterations {
        if f1.is_nan() {
            f1 = objective(x1.exp())?;
            profile.push((x1.exp(), f1));
        }
        if f2.is_nan() {
            f2 = objective(x2.exp())?;
            profile.push((x2.exp(), f2));
        }
        for (x, f) in [(x1, f1), (x2, f2)] {
            if f < best_s {
                best_s = f;
                best_c = x.exp();
            }
        }
        if it + 1 == refine_iterations {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f64::NAN;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f64::NAN;
        }
    }
    Ok(JointFit {
        c: best_c,
        spread: best_s,
        profile,
        ambiguous: local_minima > 1,
    })
}

/// `A(β) = a_max + a1 (β - β*)` left of the kink, `a_max + a2 (β - β*)` right of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseFit {
    pub a_max: f64,
    pub a1: f64,
    pub a2: f64,
    pub beta_star: f64,
    /// Sum of squared residuals.
    pub residual: f64,
    /// The kink sits at the edge of the sampled range, so the data show no
    /// interior optimum.
    pub at_boundary: bool,
}

impl PiecewiseFit {
    pub fn predict(&self, beta: f64) -> f64 {
        let d = beta - self.beta_star;
        self.a_max + if d <= 0.0 { self.a1 * d } else { self.a2 * d }
    }
}

/// Least squares for a kink fixed at `b`.
fn fit_with_kink(points: &[(f64, f64)], b: f64) -> PiecewiseFit {
    // normal equations of the 3-parameter model, solved by SVD so that an
    // empty side (kink at the boundary) leaves its slope at zero
    let a = nalgebra::DMatrix::from_fn(points.len(), 3, |i, j| {
        let d = points[i].0 - b;
        match j {
            0 => 1.0,
            1 => d.min(0.0),
            _ => d.max(0.0),
        }
    });
    let y = nalgebra::DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&y, 1e-12).unwrap_or_else(|_| nalgebra::DVector::zeros(3));
    let residual = (&a * &x - &y).norm_squared();
    PiecewiseFit {
        a_max: x[0],
        a1: x[1],
        a2: x[2],
        beta_star: b,
        residual,
        at_boundary: false,
    }
}

/// Scans every kink location exactly: the sampled `β` values and midpoints,
/// plus, for each split of the sorted data, the crossing of the two
/// separately fitted lines when it falls inside the gap.
pub fn fit_piecewise(points: &[(f64, f64)]) -> Result<PiecewiseFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "piecewise fit has 4 parameters, got {} points",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    if !(hi > lo) {
        return Err(Error::domain("beta values must not all coincide"));
    }
    let mut candidates: Vec<f64> = pts.iter().map(|p| p.0).collect();
    candidates.extend(pts.windows(2).map(|w| 0.5 * (w[0].0 + w[1].0)));
    for k in 2..=pts.len() - 2 {
        let (left, right) = pts.split_at(k);
        if let (Ok(l), Ok(r)) = (fit_line(left), fit_line(right)) {
            if l.slope != r.slope {
                let b = (r.intercept - l.intercept) / (l.slope - r.slope);
                if b >= left[k - 1].0 && b <= right[0].0 {
                    candidates.push(b);
                }
            }
        }
    }
    let fits: Vec<PiecewiseFit> = candidates.iter().map(|&b| fit_with_kink(&pts, b)).collect();
    let min = fits.iter().map(|f| f.residual).fold(f64::INFINITY, f64::min);
    let scale: f64 = pts.iter().map(|p| p.1 * p.1).sum();
    let tie = min + 1e-12 * (min + scale);
    let edge = |f: &PiecewiseFit| f.beta_star <= lo || f.beta_star >= hi;
    // among equally good kinks, a boundary one means the data show no kink
    let mut best = fits
        .iter()
        .filter(|f| f.residual <= tie && edge(f))
        .chain(fits.iter().filter(|f| f.residual <= tie))
        .next()
        .copied()
        .expect("at least one candidate");
    best.at_boundary = edge(&best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomStream;

    #[test]
    fn exponential_examples() {
        let series: Vec<(f64, f64)> = (0..=200).map(|t| (t as f64, 5.0 * (-(t as f64) / 50.0).exp())).collect();
        let fit = fit_exponential(&series, FitWindow::default()).unwrap();
        assert!((fit.t_c - 50.0).abs() < 1e-9);
        assert!((fit.amplitude - 5.0).abs() < 1e-9);
        assert!(fit.window.0 == 40.0 && fit.window.1 == 200.0);

        let mut rng = RandomStream::new(1, 0);
        let noisy: Vec<(f64, f64)> = series.iter().map(|&(t, v)| (t, v * (1.0 + 0.01 * rng.gaussian()))).collect();
        assert!((fit_exponential(&noisy, FitWindow::default()).unwrap().t_c - 50.0).abs() < 2.0);

        let flat: Vec<(f64, f64)> = (0..50).map(|t| (t as f64, 3.0)).collect();
        assert!(matches!(fit_exponential(&flat, FitWindow::default()), Err(Error::UnboundedTimescale { .. })));
        let mut bad = series.clone();
        bad[100].1 = 0.0;
        assert!(matches!(fit_exponential(&bad, FitWindow::default()), Err(Error::Domain(_))));
        assert!(fit_exponential(&series[..5], FitWindow::SkipFraction(0.0)).is_err());
    }

    #[test]
    fn powerlaw_examples() {
        let pts: Vec<(f64, f64)> = [1e-3, 1e-2, 1e-1].iter().map(|&e: &f64| (e, 3.0 * e.powf(-0.5))).collect();
        let f = fit_powerlaw(&pts).unwrap();
        assert!((f.t0 - 3.0).abs() < 1e-12 && (f.alpha - 0.5).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [1e-3, 1e-2, 1e-1].iter().map(|&e: &f64| (e, e.powf(-1.2))).collect();
        assert!((fit_powerlaw(&pts).unwrap().alpha - 1.2).abs() < 1e-12);
        assert!(matches!(fit_powerlaw(&pts[..2]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn piecewise_examples() {
        let mut rng = RandomStream::new(2, 0);
        let planted = PiecewiseFit {
            a_max: 0.9,
            a1: 0.5,
            a2: -2.0,
            beta_star: 0.95,
            residual: 0.0,
            at_boundary: false,
        };
        let pts: Vec<(f64, f64)> = (0..=20)
            .map(|i| {
                let b = 0.8 + 0.01 * i as f64;
                (b, planted.predict(b) + 1e-3 * rng.gaussian())
            })
            .collect();
        let f = fit_piecewise(&pts).unwrap();
        assert!((f.beta_star - 0.95).abs() < 0.01, "{f:?}");
        assert!(!f.at_boundary);

        let tent: Vec<(f64, f64)> = (0..9).map(|i| (i as f64, 4.0 - (i as f64 - 4.0).abs())).collect();
        let f = fit_piecewise(&tent).unwrap();
        assert!((f.beta_star - 4.0).abs() < 1e-12);

        let mono: Vec<(f64, f64)> = (0..8).map(|i| (0.1 * i as f64, 0.3 * i as f64)).collect();
        let f = fit_piecewise(&mono).unwrap();
        assert!(f.at_boundary);

        assert!(matches!(fit_piecewise(&mono[..3]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn joint_fit_recovers_planted_prefactor() {
        let fit = joint_fit_c(&[0.05, 0.1, 0.2, 0.4, 0.8], 30, |c| Ok(synthetic(c, 0.2, 0.0, &mut RandomStream::new(0, 0)))).unwrap();
        assert!((fit.c - 0.2).abs() < 0.02, "{fit:?}");
        assert!(!fit.ambiguous);
        assert!(joint_fit_c(&[0.1, 0.2, 0.3], 5, |_| Ok(vec![GammaSweep { gamma: 0.5, points: vec![(0.1, 1.0); 3] }])).is_err());
    }

    /// `T₀(γ, C) = 7 (C / C*)^{k(γ)}` with a distinct power per `γ`.
    pub(crate) fn synthetic(c: f64, planted: f64, noise: f64, rng: &mut RandomStream) -> Vec<GammaSweep> {
        [0.3, 0.5, 2.0 / 3.0, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &gamma)| {
                let t0 = 7.0 * (c / planted).powf(i as f64 - 1.5);
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
}
