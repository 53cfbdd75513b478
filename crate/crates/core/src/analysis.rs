//! Precision statistics and scaling analysis: circular RMSE, error bars,
//! weighted power-law fits `C/N^α`, batch scans and outlier removal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::circular_distance;

/// Standard quantum limit `1/(2√N)` for the rotation angle.
pub fn sql(budget: f64) -> f64 {
    0.5 / budget.sqrt()
}

/// Heisenberg limit `π/(2N)` for the rotation angle.
pub fn heisenberg_limit(budget: f64) -> f64 {
    PI / (2.0 * budget)
}

/// Root mean square circular error of `estimates` around `theta_true`.
pub fn rmse(estimates: &[f64], theta_true: f64) -> f64 {
    if estimates.is_empty() {
        return f64::NAN;
    }
    let sum: f64 = estimates.iter().map(|&e| circular_distance(e, theta_true).powi(2)).sum();
    (sum / estimates.len() as f64).sqrt()
}

/// RMSE from precomputed circular distances.
pub fn rmse_of_distances(distances: &[f64]) -> f64 {
    (distances.iter().map(|d| d * d).sum::<f64>() / distances.len() as f64).sqrt()
}

pub fn angle_averaged_rmse(per_angle: &[f64]) -> f64 {
    per_angle.iter().sum::<f64>() / per_angle.len() as f64
}

/// Variance convention for the per-angle error-bar term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorBarMethod {
    /// `Var_j = ½·Var(d²)/√(Σ_r d_r²)`, taken as written.
    #[default]
    Literal,
    /// First-order propagation `Var_j = Var(d²)/(4·Σ_r d_r²)`.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBar {
    pub value: f64,
    /// Set when an angle had all distances zero, so its term is 0/0.
    pub degenerate: bool,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Error bar of the angle-averaged RMSE, `δ = (1/J)·√(Σ_j Var_j)`.
/// `distances[j]` holds the circular distances of the runs at angle `j`.
pub fn error_bar(distances: &[Vec<f64>], method: ErrorBarMethod) -> Result<ErrorBar> {
    if distances.is_empty() {
        return Err(Error::Config("error bar needs at least one angle".into()));
    }
    let mut degenerate = false;
    let mut total = 0.0;
    for runs in distances {
        if runs.len() < 2 {
            return Err(Error::Config("error bar needs at least two runs per angle".into()));
        }
        let squares: Vec<f64> = runs.iter().map(|d| d * d).collect();
        let sum_sq: f64 = squares.iter().sum();
        if sum_sq == 0.0 {
            degenerate = true;
            continue;
        }
        let var_sq = sample_variance(&squares);
        total += match method {
            ErrorBarMethod::Literal => 0.5 * var_sq / sum_sq.sqrt(),
            ErrorBarMethod::Delta => var_sq / (4.0 * sum_sq),
        };
    }
    Ok(ErrorBar {
        value: total.sqrt() / distances.len() as f64,
        degenerate,
    })
}

/// Variance reduction below the SQL, in decibels.
pub fn db_below_sql(rmse: f64, budget: f64) -> f64 {
    10.0 * (sql(budget).powi(2) / (rmse * rmse)).log10()
}

/// One averaged point of a precision curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: u64,
    pub rmse: f64,
    pub sigma: f64,
}

/// Result of a weighted fit of `rmse = C/N^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub window: (u64, u64),
    pub alpha: f64,
    pub alpha_sigma: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub r_squared: f64,
    pub points: usize,
}

impl ScalingFit {
    /// `|α − target| ≤ k·σ_α`.
    pub fn compatible_with(&self, target: f64, k: f64) -> bool {
        (self.alpha - target).abs() <= k * self.alpha_sigma
    }
}

struct LogFit {
    intercept: f64,
    slope: f64,
    slope_var: f64,
    r_squared: f64,
    /// Weighted residual variance.
    scale: f64,
}

fn log_weights(points: &[CurvePoint]) -> Vec<f64> {
    // σ_log = σ/rmse; fall back to equal weights if any σ is unusable
    let w: Vec<f64> = points.iter().map(|p| (p.rmse / p.sigma).powi(2)).collect();
    if w.iter().all(|x| x.is_finite() && *x > 0.0) {
        w
    } else {
        vec![1.0; points.len()]
    }
}

fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> LogFit {
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - xm) * (y - ym)).sum();
    let syy: f64 = y.iter().zip(w).map(|(y, w)| w * (y - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let scale = rss / dof;
    let r_squared = if syy > 0.0 { (1.0 - rss / syy).clamp(0.0, 1.0) } else { 1.0 };
    LogFit {
        intercept,
        slope,
        slope_var: scale / sxx,
        r_squared,
        scale,
    }
}

/// Weighted least squares of `log rmse = log C − α log N` over the points
/// inside `window` (inclusive; `None` keeps everything). The standard error
/// of `α` is scaled by the weighted residual variance.
pub fn fit_power_law(points: &[CurvePoint], window: Option<(u64, u64)>) -> Result<ScalingFit> {
    let selected: Vec<CurvePoint> = points
        .iter()
        .copied()
        .filter(|p| window.is_none_or(|(lo, hi)| p.n >= lo && p.n <= hi))
        .collect();
    if selected.len() < 3 {
        return Err(Error::Fit(format!("{} points in window, need at least 3", selected.len())));
    }
    if let Some(p) = selected.iter().find(|p| !(p.rmse > 0.0)) {
        return Err(Error::Fit(format!("non-positive rmse {} at N = {}", p.rmse, p.n)));
    }
    let x: Vec<f64> = selected.iter().map(|p| (p.n as f64).ln()).collect();
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Fit("all points share the same N".into()));
    }
    let y: Vec<f64> = selected.iter().map(|p| p.rmse.ln()).collect();
    let w = log_weights(&selected);
    let fit = weighted_line(&x, &y, &w);
    Ok(ScalingFit {
        window: (selected[0].n, selected[selected.len() - 1].n),
        alpha: -fit.slope,
        alpha_sigma: fit.slope_var.sqrt(),
        c: fit.intercept.exp(),
        r_squared: fit.r_squared,
        points: selected.len(),
    })
}

/// Cumulative fits from `start_n`: the first `batch_size` points, then the
/// first `2·batch_size`, and so on, with a final fit on all points.
pub fn batch_scan(points: &[CurvePoint], batch_size: usize, start_n: u64) -> Vec<ScalingFit> {
    let tail: Vec<CurvePoint> = points.iter().copied().filter(|p| p.n >= start_n).collect();
    let mut ends: Vec<usize> = (1..).map(|k| k * batch_size).take_while(|&e| e <= tail.len()).collect();
    if ends.last() != Some(&tail.len()) && tail.len() >= 3 {
        ends.push(tail.len());
    }
    ends.into_iter()
        .filter_map(|end| fit_power_law(&tail[..end], None).ok())
        .collect()
}

/// Fits of one resource region: the whole region and its cumulative batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScan {
    pub region: (u64, u64),
    pub fit: Option<ScalingFit>,
    pub batches: Vec<ScalingFit>,
}

/// Batch scans restricted to each region in turn.
pub fn local_scan(points: &[CurvePoint], regions: &[(u64, u64)], batch_size: usize) -> Vec<RegionScan> {
    regions
        .iter()
        .map(|&(lo, hi)| {
            let inside: Vec<CurvePoint> = points.iter().copied().filter(|p| p.n >= lo && p.n <= hi).collect();
            RegionScan {
                region: (lo, hi),
                fit: fit_power_law(&inside, None).ok(),
                batches: batch_scan(&inside, batch_size, lo),
            }
        })
        .collect()
}

/// Fits on every run of `len` consecutive points.
pub fn sliding_fits(points: &[CurvePoint], len: usize) -> Vec<ScalingFit> {
    if len < 3 || points.len() < len {
        return Vec::new();
    }
    points.windows(len).filter_map(|w| fit_power_law(w, None).ok()).collect()
}

/// Outcome of [`remove_outliers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRemoval {
    pub kept: Vec<CurvePoint>,
    pub removed: Vec<CurvePoint>,
    pub fit: ScalingFit,
}

/// Leave-one-out standardized log residuals: each point is predicted by the
/// fit on the others and scaled by that fit's residual spread.
pub fn standardized_residuals(points: &[CurvePoint]) -> Vec<f64> {
    let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.rmse.ln()).collect();
    let w = log_weights(points);
    (0..points.len())
        .map(|i| {
            let keep = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &a)| a).collect() };
            let fit = weighted_line(&keep(&x), &keep(&y), &keep(&w));
            let resid = (y[i] - fit.intercept - fit.slope * x[i]) * w[i].sqrt();
            if resid.abs() < 1e-12 {
                0.0
            } else {
                resid / fit.scale.sqrt()
            }
        })
        .collect()
}

/// Drops points whose standardized log residual exceeds `k` in absolute
/// value, then refits once. A single pass; needs at least 4 points.
pub fn remove_outliers(points: &[CurvePoint], fit: &ScalingFit, k: f64) -> Result<OutlierRemoval> {
    let inside: Vec<CurvePoint> = points
        .iter()
        .copied()
        .filter(|p| p.n >= fit.window.0 && p.n <= fit.window.1)
        .collect();
    if inside.len() < 4 {
        return Ok(OutlierRemoval {
            kept: inside,
            removed: Vec::new(),
            fit: fit.clone(),
        });
    }
    let z = standardized_residuals(&inside);
    let (kept, removed): (Vec<_>, Vec<_>) = inside.iter().zip(&z).partition(|(_, z)| z.abs() <= k);
    let kept: Vec<CurvePoint> = kept.into_iter().map(|(p, _)| *p).collect();
    let removed: Vec<CurvePoint> = removed.into_iter().map(|(p, _)| *p).collect();
    let refit = if removed.is_empty() { fit.clone() } else { fit_power_law(&kept, None)? };
    Ok(OutlierRemoval { kept, removed, fit: refit })
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn curve(f: impl Fn(f64) -> f64, ns: impl IntoIterator<Item = u64>) -> Vec<CurvePoint> {
        ns.into_iter()
            .map(|n| {
                let r = f(n as f64);
                CurvePoint { n, rmse: r, sigma: 0.01 * r }
            })
            .collect()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.4, 0.4, 0.4], 0.4), 0.0);
        assert_abs_diff_eq!(rmse(&[0.3, 0.4], 0.0), 0.125f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(rmse(&[0.3, 0.4], 0.0), 0.3536, epsilon = 1e-4);
    }

    #[test]
    fn rmse_of_uniform_estimates() {
        // distance of a uniform estimate is uniform on [0, π/2]: E[d²] = π²/12
        let analytic = PI / (2.0 * 3f64.sqrt());
        assert_abs_diff_eq!(analytic, 0.9069, epsilon = 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let est: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>() * PI).collect();
        assert_abs_diff_eq!(rmse(&est, 1.1), analytic, epsilon = 2e-3);
    }

    #[test]
    fn averaged_rmse() {
        assert_eq!(angle_averaged_rmse(&[0.25]), 0.25);
        assert_abs_diff_eq!(angle_averaged_rmse(&[0.1, 0.3]), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn error_bar_degenerate() {
        let eb = error_bar(&[vec![0.0; 5], vec![0.0; 5]], ErrorBarMethod::Literal).unwrap();
        assert_eq!(eb.value, 0.0);
        assert!(eb.degenerate);
        assert!(error_bar(&[vec![0.1]], ErrorBarMethod::Literal).is_err());
        assert!(error_bar(&[], ErrorBarMethod::Literal).is_err());
    }

    #[test]
    fn error_bar_three_distances() {
        // d² = {0.01, 0.04, 0.09}; sample variance 0.0016333…; Σd² = 0.14
        let squares = [0.01, 0.04, 0.09];
        let mean = 0.14 / 3.0;
        let var: f64 = squares.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / 2.0;
        assert_abs_diff_eq!(var, 0.004_9 / 3.0, epsilon = 1e-15);
        let expected = (0.5 * var / 0.14f64.sqrt()).sqrt();
        let eb = error_bar(&[vec![0.1, 0.2, 0.3]], ErrorBarMethod::Literal).unwrap();
        assert_abs_diff_eq!(eb.value, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(eb.value, 0.046_72, epsilon = 1e-5);
        assert!(!eb.degenerate);

        let delta = error_bar(&[vec![0.1, 0.2, 0.3]], ErrorBarMethod::Delta).unwrap();
        assert_abs_diff_eq!(delta.value, (var / 0.56).sqrt(), epsilon = 1e-15);
    }

    /// Mean error bar over repeated synthetic Gaussian campaigns.
    fn mean_bar(runs: usize, method: ErrorBarMethod, rng: &mut ChaCha8Rng) -> f64 {
        let normal = Normal::new(0.0, 0.05).unwrap();
        let reps = 200;
        (0..reps)
            .map(|_| {
                let d: Vec<Vec<f64>> = (0..4)
                    .map(|_| (0..runs).map(|_| f64::abs(normal.sample(rng))).collect())
                    .collect();
                error_bar(&d, method).unwrap().value
            })
            .sum::<f64>()
            / reps as f64
    }

    #[test]
    fn error_bar_scaling_in_runs() {
        // Σd² grows like R while Var(d²) stays put, so the literal bar
        // shrinks like R^(-1/4) and the delta-method bar like R^(-1/2)
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (method, expected) in [(ErrorBarMethod::Literal, -0.25), (ErrorBarMethod::Delta, -0.5)] {
            let small = mean_bar(50, method, &mut rng);
            let large = mean_bar(800, method, &mut rng);
            let slope = (large / small).ln() / 16f64.ln();
            assert!((slope - expected).abs() < 0.05, "{method:?}: slope {slope}");
        }
    }

    #[test]
    fn db_examples() {
        assert_abs_diff_eq!(db_below_sql(sql(100.0), 100.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(db_below_sql(sql(100.0) / 2.0, 100.0), 6.0206, epsilon = 1e-4);
    }

    #[test]
    fn exact_power_laws() {
        let pts = curve(|n| 0.5 / n.powf(0.75), (1..=40).map(|k| k * 25));
        let fit = fit_power_law(&pts, None).unwrap();
        assert_abs_diff_eq!(fit.alpha, 0.75, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.c, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);

        let pts = curve(sql, (1..=30).map(|k| 2 * k));
        let fit = fit_power_law(&pts, Some((10, 50))).unwrap();
        assert_abs_diff_eq!(fit.alpha, 0.5, epsilon = 1e-9);
        assert_eq!(fit.window, (10, 50));
        assert_eq!(fit.points, 21);
    }

    #[test]
    fn fit_rejects_degenerate_windows() {
        let pts = curve(sql, [2, 4, 6]);
        assert!(fit_power_law(&pts, Some((2, 4))).is_err());
        let mut bad = curve(sql, [2, 4, 6, 8]);
        bad[1].rmse = 0.0;
        assert!(fit_power_law(&bad, None).is_err());
    }

    #[test]
    fn noisy_fit_coverage() {
        // α = 1 with lognormal noise σ = 0.05: α within 3σ_α in ~99% of trials
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let noise = Normal::<f64>::new(0.0, 0.05).unwrap();
        let ns: Vec<u64> = (0..20).map(|k| (10.0 * 1.3f64.powi(k)).round() as u64).collect();
        let trials = 1000;
        let covered = (0..trials)
            .filter(|_| {
                let pts: Vec<CurvePoint> = ns
                    .iter()
                    .map(|&n| {
                        let r = 2.0 / n as f64 * noise.sample(&mut rng).exp();
                        CurvePoint { n, rmse: r, sigma: 0.05 * r }
                    })
                    .collect();
                fit_power_law(&pts, None).unwrap().compatible_with(1.0, 3.0)
            })
            .count();
        let rate = covered as f64 / trials as f64;
        assert!(rate > 0.97, "coverage {rate}");
    }

    #[test]
    fn batch_scan_base_case_and_transition() {
        let pts: Vec<CurvePoint> = curve(
            |n| if n <= 100.0 { sql(n) } else { sql(100.0) * 100.0 / n },
            (1..=60).map(|k| k * 5),
        );
        let scans = batch_scan(&pts, 10, 0);
        let first = fit_power_law(&pts[..10], None).unwrap();
        assert_eq!(scans[0], first);
        assert_eq!(scans.len(), 6);
        assert_abs_diff_eq!(scans[0].alpha, 0.5, epsilon = 1e-9);
        // the cumulative exponent climbs once the α = 1 segment enters
        assert!(scans.windows(2).skip(1).all(|w| w[1].alpha > w[0].alpha));
        // unweighted least squares on the logs (equal relative σ)
        for (scan, expected) in scans.iter().zip([0.5, 0.5, 0.545_010_6, 0.599_629_7, 0.644_543_5, 0.680_381_2]) {
            assert_abs_diff_eq!(scan.alpha, expected, epsilon = 1e-6);
        }

        let local = local_scan(&pts, &[(5, 100), (105, 300)], 10);
        assert_abs_diff_eq!(local[0].fit.as_ref().unwrap().alpha, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(local[1].fit.as_ref().unwrap().alpha, 1.0, epsilon = 1e-9);
        assert_eq!(local[1].batches.len(), 4);
    }

    #[test]
    fn outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::<f64>::new(0.0, 0.03).unwrap();
        let pts: Vec<CurvePoint> = (1..=30)
            .map(|k| {
                let n = 20 * k;
                let r = 1.0 / (n as f64).powf(0.8) * noise.sample(&mut rng).exp();
                CurvePoint { n, rmse: r, sigma: 0.03 * r }
            })
            .collect();
        let fit = fit_power_law(&pts, None).unwrap();
        let clean = remove_outliers(&pts, &fit, 4.0).unwrap();
        assert!(clean.removed.is_empty());
        assert_eq!(clean.fit, fit);

        let mut spiked = pts.clone();
        spiked[12].rmse *= 10.0;
        spiked[12].sigma *= 10.0;
        let fit = fit_power_law(&spiked, None).unwrap();
        let out = remove_outliers(&spiked, &fit, 4.0).unwrap();
        assert_eq!(out.removed, vec![spiked[12]]);
        assert_eq!(out.kept.len(), 29);
        assert!((out.fit.alpha - 0.8).abs() < 0.05);
    }

    #[test]
    fn outlier_removal_is_stable_on_clean_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let noise = Normal::<f64>::new(0.0, 0.05).unwrap();
        for _ in 0..50 {
            let pts: Vec<CurvePoint> = (1..=25)
                .map(|k| {
                    let n = 10 * k;
                    let r = 0.7 / (n as f64).powf(0.6) * noise.sample(&mut rng).exp();
                    CurvePoint { n, rmse: r, sigma: 0.05 * r }
                })
                .collect();
            let fit = fit_power_law(&pts, None).unwrap();
            let out = remove_outliers(&pts, &fit, 4.0).unwrap();
            assert!((out.fit.alpha - fit.alpha).abs() < 0.02);
        }
    }

    #[test]
    fn spearman_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(spearman(&x, &[10.0, 20.0, 30.0, 40.0]), 1.0);
        assert_abs_diff_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..2000).map(|k| k as f64).collect();
        let ys: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        assert!(spearman(&xs, &ys).abs() < 0.1);
    }
}
