//! Photon allocation under a fixed resource budget, ladder comparison and
//! the budgets at which longer ladder prefixes take over.
//!
//! The continuous relaxation follows the stationarity conditions of the
//! bound with a multiplier on `Σ s_i n_i = N`. Localization stages have a
//! closed form in the multiplier; the last stage is solved numerically. The
//! multiplier is found by bisection on its logarithm, then counts are
//! floored to even integers and the slack is spent greedily.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::check_visibility;
use crate::optim::scan_then_golden;
use crate::schedule::{
    bound_continuous, error_upper_bound, feasible_gamma1_range, log_confidence_factor, validate_ladder, Schedule, N_MIN,
};

/// Tolerance on `|Σ s_i n_i − N|` for the continuous relaxation.
const BUDGET_TOL: f64 = 1e-10;
/// γ_1 assigned to single-stage ladders, where it only sets the reported
/// interval width.
pub const SINGLE_STAGE_GAMMA1: f64 = 2.0;
const MERIT_GRID_POINTS: usize = 200;
const MERIT_TOL: f64 = 1e-6;

/// Applies per-stage visibilities: `C_i → C_i^{v_i²}` for the localization
/// stages and `b → b·v_K²` for the final-stage terms. Always starts from the
/// unscaled constants, so repeated calls do not compound.
pub fn rescale_for_visibility(schedule: &Schedule, v: &[f64]) -> Result<Schedule> {
    let k = schedule.stages();
    if v.len() != k {
        return Err(Error::Config(format!("{} visibilities for a {k}-stage schedule", v.len())));
    }
    for &vi in v {
        check_visibility(vi)?;
    }
    let mut out = schedule.clone();
    for i in 0..k {
        let base = log_confidence_factor(schedule.gamma[i], schedule.b);
        out.log_c[i] = if i + 1 < k { base * v[i] * v[i] } else { base };
    }
    out.b_last = schedule.b * v[k - 1] * v[k - 1];
    out.visibility = v.to_vec();
    Ok(out)
}

/// Knobs of the allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationOptions {
    /// Envelope constant of the bound. Does not move the optimum.
    pub a: f64,
    pub n_min: u64,
}

impl Default for AllocationOptions {
    fn default() -> Self {
        AllocationOptions { a: 1.0, n_min: N_MIN }
    }
}

/// Optimized photon allocation for one schedule and budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourcePlan {
    pub schedule: Schedule,
    pub n: Vec<u64>,
    pub budget: u64,
    pub n_used: u64,
    pub bound: f64,
    /// Continuous relaxation before rounding.
    pub relaxed: Vec<f64>,
}

/// Serialized form of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub s: Vec<u32>,
    pub gamma: Vec<f64>,
    pub n: Vec<u64>,
    #[serde(rename = "N")]
    pub budget: u64,
    pub n_used: u64,
    pub bound: f64,
    pub b: f64,
    pub v: Vec<f64>,
}

impl ResourcePlan {
    pub fn document(&self) -> PlanDocument {
        PlanDocument {
            s: self.schedule.s.clone(),
            gamma: self.schedule.gamma.clone(),
            n: self.n.clone(),
            budget: self.budget,
            n_used: self.n_used,
            bound: self.bound,
            b: self.schedule.b,
            v: self.schedule.visibility.clone(),
        }
    }
}

/// Continuous stationary allocation for a given multiplier `λ`.
struct Relaxation<'a> {
    schedule: &'a Schedule,
    weights: Vec<f64>,
    a: f64,
    n_min: f64,
}

impl<'a> Relaxation<'a> {
    fn new(schedule: &'a Schedule, opts: &AllocationOptions) -> Self {
        Relaxation {
            weights: schedule.localization_weights(),
            schedule,
            a: opts.a,
            n_min: opts.n_min as f64,
        }
    }

    fn counts(&self, log_lambda: f64) -> Vec<f64> {
        let k = self.schedule.stages();
        let mut n = Vec::with_capacity(k);
        for i in 0..k - 1 {
            let c = self.schedule.log_c[i];
            let s = self.schedule.s[i] as f64;
            let n_i = if c > 0.0 {
                2.0 / c * ((self.a * self.weights[i] * c / (2.0 * s)).ln() - log_lambda)
            } else {
                self.n_min
            };
            n.push(n_i.max(self.n_min));
        }
        n.push(self.last_stage(log_lambda));
        n
    }

    /// Marginal gain of the final-stage terms, `−∂/∂n_K`.
    fn last_gain(&self, n: f64) -> f64 {
        let s = self.schedule.s_last();
        let b = self.schedule.b_last;
        self.a * PI * PI / (2.0 * b * n * n * s * s) + 3.0 * self.a * PI * PI * b / (8.0 * s * s) * (-b * n / 2.0).exp()
    }

    fn last_gain_slope(&self, n: f64) -> f64 {
        let s = self.schedule.s_last();
        let b = self.schedule.b_last;
        -self.a * PI * PI / (b * n * n * n * s * s) - 3.0 * self.a * PI * PI * b * b / (16.0 * s * s) * (-b * n / 2.0).exp()
    }

    /// Solves `gain(n_K) = λ s_K` by Newton on the log-gain, falling back to
    /// bisection whenever a step leaves the bracket.
    fn last_stage(&self, log_lambda: f64) -> f64 {
        let target = log_lambda + self.schedule.s_last().ln();
        let h = |n: f64| self.last_gain(n).ln() - target;
        if h(self.n_min) <= 0.0 {
            return self.n_min;
        }
        let mut lo = self.n_min;
        let mut hi = 2.0 * self.n_min;
        while h(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let hx = h(x);
            if hx > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hx.abs() < 1e-14 || hi - lo < 1e-12 * hi {
                break;
            }
            let slope = self.last_gain_slope(x) / self.last_gain(x);
            let newton = x - hx / slope;
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        x
    }

    fn total(&self, log_lambda: f64) -> f64 {
        self.counts(log_lambda)
            .iter()
            .zip(&self.schedule.s)
            .map(|(n, &s)| n * s as f64)
            .sum()
    }

    /// Multiplier matching the budget; the total is non-increasing in `λ`.
    fn solve(&self, budget: f64) -> Vec<f64> {
        let mut lo = 0.0_f64;
        let mut hi = 0.0_f64;
        let mut step = 1.0;
        while self.total(lo) < budget {
            lo -= step;
            step *= 2.0;
        }
        step = 1.0;
        while self.total(hi) > budget {
            hi += step;
            step *= 2.0;
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..400 {
            mid = 0.5 * (lo + hi);
            let t = self.total(mid);
            if (t - budget).abs() < BUDGET_TOL {
                break;
            }
            if t > budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        self.counts(mid)
    }
}

pub fn optimize_allocation(schedule: &Schedule, budget: u64) -> Result<ResourcePlan> {
    optimize_allocation_with(schedule, budget, &AllocationOptions::default())
}

pub fn optimize_allocation_with(schedule: &Schedule, budget: u64, opts: &AllocationOptions) -> Result<ResourcePlan> {
    if opts.n_min < 2 || opts.n_min % 2 != 0 {
        return Err(Error::Config(format!("n_min = {} must be even and at least 2", opts.n_min)));
    }
    let required: u64 = schedule.s.iter().map(|&s| s as u64 * opts.n_min).sum();
    if budget < required {
        return Err(Error::Budget { budget, required });
    }
    let relax = Relaxation::new(schedule, opts);
    let relaxed = relax.solve(budget as f64);

    let mut n: Vec<u64> = relaxed
        .iter()
        .map(|&x| {
            let even = 2 * (x / 2.0).floor() as u64;
            even.max(opts.n_min)
        })
        .collect();
    // flooring can only free budget: greedy refill, then pairwise exchanges
    // to undo unlucky roundings
    let bound_of = |n: &[u64]| {
        let nf: Vec<f64> = n.iter().map(|&x| x as f64).collect();
        bound_continuous(schedule, &nf, opts.a)
    };
    let mut current = refill(schedule, &mut n, budget, &bound_of);
    for _ in 0..10_000 {
        let mut best: Option<(Vec<u64>, f64)> = None;
        for j in 0..n.len() {
            for i in (0..n.len()).filter(|&i| i != j) {
                let mut trial = n.clone();
                trial[j] += 2;
                while schedule.resources(&trial) > budget && trial[i] >= opts.n_min + 2 {
                    trial[i] -= 2;
                }
                if schedule.resources(&trial) > budget {
                    continue;
                }
                let b = refill(schedule, &mut trial, budget, &bound_of);
                if b < best.as_ref().map_or(current, |x| x.1) * (1.0 - 1e-12) {
                    best = Some((trial, b));
                }
            }
        }
        let Some((trial, b)) = best else { break };
        n = trial;
        current = b;
    }
    let used = schedule.resources(&n);

    let bound = error_upper_bound(schedule, &n, opts.a)?;
    Ok(ResourcePlan {
        schedule: schedule.clone(),
        n_used: used,
        n,
        budget,
        bound,
        relaxed,
    })
}

/// Spends the unused budget two photons at a time on the stage with the
/// best bound decrease per resource. Returns the final bound.
fn refill(schedule: &Schedule, n: &mut [u64], budget: u64, bound_of: &impl Fn(&[u64]) -> f64) -> f64 {
    let mut used = schedule.resources(n);
    let mut current = bound_of(n);
    loop {
        let remaining = budget - used;
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..n.len() {
            let cost = 2 * schedule.s[i] as u64;
            if cost > remaining {
                continue;
            }
            n[i] += 2;
            let candidate = bound_of(n);
            n[i] -= 2;
            let gain = (current - candidate) / cost as f64;
            if best.is_none_or(|(_, g, _)| gain > g) {
                best = Some((i, gain, candidate));
            }
        }
        let Some((i, _, candidate)) = best else { return current };
        n[i] += 2;
        used += 2 * schedule.s[i] as u64;
        current = candidate;
    }
}

/// Asymptotic figure of merit `Σ_{i<K} s_i/(γ_{i−1}² log C_i)` with
/// `γ_0 = 1` and visibility-rescaled `C_i`. Lower is better.
pub fn ladder_merit(s: &[u32], gamma: &[f64], b: f64, v: &[f64]) -> f64 {
    (0..s.len().saturating_sub(1))
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { gamma[i - 1] };
            let log_c = log_confidence_factor(gamma[i], b) * v[i] * v[i];
            if log_c > 0.0 {
                s[i] as f64 / (prev * prev * log_c)
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// A ladder scored by its merit at the best feasible `γ_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderScore {
    pub ladder: Vec<u32>,
    pub gamma1: f64,
    pub merit: f64,
    /// `false` when no `γ_1` is feasible; such ladders rank last.
    pub feasible: bool,
}

/// Minimizes the merit over the usable part of the feasible `γ_1` range.
pub fn best_gamma1(s: &[u32], b: f64, v: &[f64]) -> Result<LadderScore> {
    validate_ladder(s)?;
    if v.len() != s.len() {
        return Err(Error::Config(format!("{} visibilities for a {}-stage ladder", v.len(), s.len())));
    }
    if s.len() == 1 {
        return Ok(LadderScore {
            ladder: s.to_vec(),
            gamma1: SINGLE_STAGE_GAMMA1,
            merit: 0.0,
            feasible: true,
        });
    }
    let Some(range) = feasible_gamma1_range(s)? else {
        return Ok(LadderScore {
            ladder: s.to_vec(),
            gamma1: f64::NAN,
            merit: f64::INFINITY,
            feasible: false,
        });
    };
    let (lo, hi) = range.usable();
    let hi = if hi.is_finite() { hi } else { 10.0 * lo + 10.0 };
    let merit = |g: f64| match crate::schedule::gamma_sequence(g, s) {
        Ok(gamma) => ladder_merit(s, &gamma, b, v),
        Err(_) => f64::INFINITY,
    };
    let (mut gamma1, mut value) = scan_then_golden(merit, lo, hi, MERIT_GRID_POINTS, MERIT_TOL);
    // the optimum often sits on an edge of the range
    for edge in [lo, hi] {
        let m = merit(edge);
        if m < value {
            (gamma1, value) = (edge, m);
        }
    }
    Ok(LadderScore {
        ladder: s.to_vec(),
        gamma1,
        merit: value,
        feasible: value.is_finite(),
    })
}

/// Every sorted subset of `available` that contains 1.
pub fn candidate_ladders(available: &[u32]) -> Vec<Vec<u32>> {
    let mut extra: Vec<u32> = available.iter().copied().filter(|&s| s > 1).collect();
    extra.sort_unstable();
    extra.dedup();
    (0..1u64 << extra.len())
        .map(|mask| {
            let mut ladder = vec![1];
            ladder.extend(extra.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, &s)| s));
            ladder
        })
        .collect()
}

/// Scores all candidate ladders built from `available` and sorts them by
/// merit, infeasible ones last. `visibility` maps a multiplier to its
/// visibility; unknown multipliers use 1.
pub fn compare_strategies(available: &[u32], b: f64, visibility: impl Fn(u32) -> f64) -> Result<Vec<LadderScore>> {
    let mut scores = candidate_ladders(available)
        .into_iter()
        .map(|ladder| {
            let v: Vec<f64> = ladder.iter().map(|&s| visibility(s)).collect();
            best_gamma1(&ladder, b, &v)
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|x, y| {
        (!x.feasible, x.merit, x.ladder.len())
            .partial_cmp(&(!y.feasible, y.merit, y.ladder.len()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(scores)
}

/// Nested prefixes of a ladder with their tuned `γ_1` and the budget from
/// which each one is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCatalog {
    pub ladder: Vec<u32>,
    pub visibilities: Vec<f64>,
    pub b: f64,
    /// Merit-optimal `γ_1` of each prefix, indexed by prefix length − 1.
    pub gamma1: Vec<f64>,
    /// First budget at which each prefix beats all shorter ones.
    /// `None` if that never happened on the evaluated grid.
    pub upgrade_points: Vec<Option<u64>>,
}

impl StrategyCatalog {
    pub fn new(ladder: &[u32], visibilities: &[f64], b: f64) -> Result<Self> {
        validate_ladder(ladder)?;
        if visibilities.len() != ladder.len() {
            return Err(Error::Config(format!(
                "{} visibilities for a {}-stage ladder",
                visibilities.len(),
                ladder.len()
            )));
        }
        let gamma1 = (1..=ladder.len())
            .map(|k| {
                let score = best_gamma1(&ladder[..k], b, &visibilities[..k])?;
                if score.feasible {
                    Ok(score.gamma1)
                } else {
                    Err(Error::Infeasible(format!("prefix {:?} has no feasible γ_1", &ladder[..k])))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StrategyCatalog {
            ladder: ladder.to_vec(),
            visibilities: visibilities.to_vec(),
            b,
            gamma1,
            upgrade_points: vec![None; ladder.len()],
        })
    }

    pub fn prefixes(&self) -> usize {
        self.ladder.len()
    }

    /// Visibility-rescaled schedule of the prefix of length `k`.
    pub fn schedule(&self, k: usize) -> Result<Schedule> {
        let base = Schedule::new(&self.ladder[..k], self.gamma1[k - 1], self.b)?;
        rescale_for_visibility(&base, &self.visibilities[..k])
    }

    /// Longest prefix whose upgrade point has been reached at `budget`.
    pub fn active_prefix(&self, budget: u64) -> Option<usize> {
        self.upgrade_points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_some_and(|p| p <= budget))
            .map(|(k, _)| k + 1)
            .next_back()
    }

    /// Plan for `budget` with the active prefix.
    pub fn plan(&self, budget: u64) -> Result<ResourcePlan> {
        let k = self.active_prefix(budget).ok_or(Error::Budget {
            budget,
            required: self.ladder[0] as u64 * N_MIN,
        })?;
        optimize_allocation(&self.schedule(k)?, budget)
    }
}

/// Evaluates every nested prefix over `grid` and records the first budget
/// at which each one strictly beats all shorter prefixes. Points are made
/// monotone in prefix length.
pub fn upgrade_points(catalog: &StrategyCatalog, grid: &[u64]) -> Result<StrategyCatalog> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("budget grid must be strictly ascending".into()));
    }
    let schedules = (1..=catalog.prefixes())
        .map(|k| catalog.schedule(k))
        .collect::<Result<Vec<_>>>()?;
    let mut points: Vec<Option<u64>> = vec![None; catalog.prefixes()];
    for &budget in grid {
        let mut best_shorter = f64::INFINITY;
        for (k, schedule) in schedules.iter().enumerate() {
            if budget < schedule.min_resources() {
                break;
            }
            let bound = optimize_allocation(schedule, budget)?.bound;
            if bound < best_shorter && points[k].is_none() {
                points[k] = Some(budget);
            }
            best_shorter = best_shorter.min(bound);
        }
        if points.iter().all(Option::is_some) {
            break;
        }
    }
    for k in 1..points.len() {
        if let (Some(prev), Some(cur)) = (points[k - 1], points[k]) {
            points[k] = Some(cur.max(prev));
        } else if points[k - 1].is_none() {
            points[k] = None;
        }
    }
    let mut out = catalog.clone();
    out.upgrade_points = points;
    Ok(out)
}
