//! Statistical properties of simulated campaigns.

use heisenberg_core::analysis::{fit_power_law, spearman, sql};
use heisenberg_core::campaign::{simulate, uniform_strategy, CampaignConfig};
use heisenberg_core::config::{angle_grid, budget_grid};
use heisenberg_core::schedule::DEFAULT_B;

/// First-order RMSE of the single-stage estimator relative to the SQL at
/// angle θ: `Var θ̂ = (cos⁴2θ + sin⁴2θ)/(2N)`, so the ratio is
/// `√(2 − sin²4θ)`.
fn single_stage_ratio(theta: f64) -> f64 {
    (2.0 - (4.0 * theta).sin().powi(2)).sqrt()
}

#[test]
fn single_stage_tracks_first_order_prediction() {
    let angles = angle_grid(17);
    let oracle = angles.iter().map(|&t| single_stage_ratio(t)).sum::<f64>() / angles.len() as f64;
    assert!((oracle - 1.2160).abs() < 1e-4);

    let grid = vec![200, 1000, 4000];
    let campaign = CampaignConfig::new(grid, 400, angles.clone(), vec![uniform_strategy(&[1], 1.0)], DEFAULT_B, 5);
    let out = simulate(&campaign).unwrap();
    for p in out.curve("s1") {
        let ratio = p.rmse / sql(p.n as f64);
        assert!((ratio - oracle).abs() < 0.03, "N = {}: {ratio} vs {oracle}", p.n);
    }
    let fit = fit_power_law(&out.curve("s1"), None).unwrap();
    assert!((fit.alpha - 0.5).abs() < 0.02, "{fit:?}");
}

#[test]
fn two_stage_ladder_beats_sql_scaling() {
    let grid = budget_grid(46, 264, 24, &[], 0);
    let campaign = CampaignConfig::new(grid, 200, angle_grid(17), vec![uniform_strategy(&[1, 2], 1.0)], DEFAULT_B, 6);
    let out = simulate(&campaign).unwrap();
    assert!(out.records.iter().all(|r| r.prefix == 2));
    let fit = fit_power_law(&out.curve("s1-2"), None).unwrap();
    assert!(fit.alpha - 0.5 >= 3.0 * fit.alpha_sigma, "{fit:?}");
}

#[test]
fn per_angle_errors_show_no_trend() {
    let grid = budget_grid(2, 30_000, 40, &[], 0);
    let angles = angle_grid(17);
    let campaign = CampaignConfig::new(grid.clone(), 200, angles.clone(), vec![uniform_strategy(&[1, 2, 11, 51], 1.0)], DEFAULT_B, 8);
    let out = simulate(&campaign).unwrap();
    let mut rhos = Vec::new();
    for &n in &grid {
        let per_angle: Vec<f64> = out
            .rows
            .iter()
            .filter(|r| r.budget == n && r.angle_index.is_some())
            .map(|r| r.rmse)
            .collect();
        let max = per_angle.iter().cloned().fold(f64::MIN, f64::max);
        let min = per_angle.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min <= 3.0, "N = {n}: spread {}", max / min);
        rhos.push(spearman(&angles, &per_angle));
    }
    // without a trend ρ has mean 0 and standard deviation 1/√(J − 1) = 0.25
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let se = 0.25 / (rhos.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean rho {mean}");
    // and exceeds 0.3 in absolute value about 24% of the time
    let frac = rhos.iter().filter(|r| r.abs() >= 0.3).count() as f64 / rhos.len() as f64;
    let sd = (0.24 * 0.76 / rhos.len() as f64).sqrt();
    assert!(frac <= 0.24 + 3.0 * sd, "fraction {frac}");
}
