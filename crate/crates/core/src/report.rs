//! Fit reports of saved campaigns: global and local scaling analysis.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    batch_scan, db_below_sql, fit_power_law, remove_outliers, sliding_fits, CurvePoint, ScalingFit,
};
use crate::campaign::{curve, ResultRow, Sidecar};
use crate::config::AnalysisSection;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: (u64, u64),
    pub fit: Option<ScalingFit>,
    pub batches: Vec<ScalingFit>,
    /// Budgets dropped as outliers before the region fit.
    pub removed: Vec<u64>,
    /// `α` within `sigma_level` standard errors of 1.
    pub heisenberg_compatible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy_id: String,
    pub upgrade_points: Vec<Option<u64>>,
    pub global: Option<ScalingFit>,
    pub global_removed: Vec<u64>,
    pub global_batches: Vec<ScalingFit>,
    pub regions: Vec<RegionReport>,
    /// Non-overlapping windows compatible with `α = 1` that stay inside one
    /// upgrade region.
    pub heisenberg_windows: Vec<ScalingFit>,
    pub best_db: Option<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub analysis: AnalysisSection,
    pub strategies: Vec<StrategyReport>,
}

/// Fit with optional outlier removal; returns the fit and removed budgets.
pub fn robust_fit(points: &[CurvePoint], settings: &AnalysisSection) -> Option<(ScalingFit, Vec<CurvePoint>, Vec<u64>)> {
    let fit = fit_power_law(points, None).ok()?;
    if !settings.remove_outliers {
        return Some((fit, points.to_vec(), Vec::new()));
    }
    let cleaned = remove_outliers(points, &fit, settings.outlier_k).ok()?;
    let removed = cleaned.removed.iter().map(|p| p.n).collect();
    Some((cleaned.fit, cleaned.kept, removed))
}

/// Sliding windows of `len` points compatible with `target` at `k` σ,
/// skipping windows that straddle a boundary, chosen greedily from the left
/// without overlap.
pub fn compatible_windows(points: &[CurvePoint], len: usize, target: f64, k: f64, boundaries: &[u64]) -> Vec<ScalingFit> {
    let mut chosen: Vec<ScalingFit> = Vec::new();
    for fit in sliding_fits(points, len) {
        let (lo, hi) = fit.window;
        if boundaries.iter().any(|&b| lo < b && b <= hi) {
            continue;
        }
        if chosen.last().is_some_and(|c| lo <= c.window.1) {
            continue;
        }
        if fit.compatible_with(target, k) {
            chosen.push(fit);
        }
    }
    chosen
}

pub fn analyze_strategy(
    rows: &[ResultRow],
    strategy_id: &str,
    upgrade_points: &[Option<u64>],
    settings: &AnalysisSection,
) -> StrategyReport {
    let points = curve(rows, strategy_id);
    let tail: Vec<CurvePoint> = points.iter().copied().filter(|p| p.n >= settings.global_start).collect();
    let (global, global_kept, global_removed) = match robust_fit(&tail, settings) {
        Some((fit, kept, removed)) => (Some(fit), kept, removed),
        None => (None, tail.clone(), Vec::new()),
    };
    let global_batches = batch_scan(&global_kept, settings.batch_size, settings.global_start);
    let regions = settings
        .regions
        .iter()
        .map(|&(lo, hi)| {
            let inside: Vec<CurvePoint> = points.iter().copied().filter(|p| p.n >= lo && p.n <= hi).collect();
            let (fit, kept, removed) = match robust_fit(&inside, settings) {
                Some((f, k, r)) => (Some(f), k, r),
                None => (None, inside, Vec::new()),
            };
            RegionReport {
                region: (lo, hi),
                heisenberg_compatible: fit.as_ref().is_some_and(|f| f.compatible_with(1.0, settings.sigma_level)),
                fit,
                batches: batch_scan(&kept, settings.batch_size, lo),
                removed,
            }
        })
        .collect();
    let boundaries: Vec<u64> = upgrade_points.iter().flatten().copied().collect();
    let heisenberg_windows = compatible_windows(&points, settings.window_points, 1.0, settings.sigma_level, &boundaries);
    let best_db = points
        .iter()
        .map(|p| (p.n, db_below_sql(p.rmse, p.n as f64)))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    StrategyReport {
        strategy_id: strategy_id.to_string(),
        upgrade_points: upgrade_points.to_vec(),
        global,
        global_removed,
        global_batches,
        regions,
        heisenberg_windows,
        best_db,
    }
}

/// Report for every strategy of a saved campaign.
pub fn analyze_campaign(rows: &[ResultRow], sidecar: &Sidecar, settings: &AnalysisSection) -> Result<FitReport> {
    Ok(FitReport {
        analysis: settings.clone(),
        strategies: sidecar
            .strategies
            .iter()
            .map(|s| analyze_strategy(rows, &s.id, &s.upgrade_points, settings))
            .collect(),
    })
}

/// Plain-text summary table of a report.
pub fn summary_table(report: &FitReport) -> String {
    let mut out = String::new();
    for s in &report.strategies {
        out.push_str(&format!("strategy {}\n", s.strategy_id));
        if let Some(g) = &s.global {
            out.push_str(&format!(
                "  global  N {:>6} – {:<6} alpha {:.4} ± {:.4}  R2 {:.4}\n",
                g.window.0, g.window.1, g.alpha, g.alpha_sigma, g.r_squared
            ));
        }
        out.push_str("  region            alpha             R2      alpha=1 (3σ)\n");
        for r in &s.regions {
            match &r.fit {
                Some(f) => out.push_str(&format!(
                    "  {:>6} – {:<6}  {:.4} ± {:.4}  {:.4}  {}\n",
                    r.region.0,
                    r.region.1,
                    f.alpha,
                    f.alpha_sigma,
                    f.r_squared,
                    if r.heisenberg_compatible { "yes" } else { "no" }
                )),
                None => out.push_str(&format!("  {:>6} – {:<6}  (too few points)\n", r.region.0, r.region.1)),
            }
        }
        if let Some((n, db)) = s.best_db {
            out.push_str(&format!("  best point: {db:.2} dB below SQL at N = {n}\n"));
        }
        out.push_str(&format!("  windows compatible with alpha = 1: {}\n", s.heisenberg_windows.len()));
    }
    out
}
