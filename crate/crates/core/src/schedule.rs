//! Interval-width schedule: the γ recursion, the feasible range of its free
//! starting value, the confidence factors `C(γ)`, the `D` coefficients and
//! the analytical bound on the squared phase error.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::bisect_predicate;

/// Concentration constant of the confidence factor, calibrated for stages
/// with at most 40 photons. Larger stages reuse it; the bound only loosens.
pub const DEFAULT_B: f64 = 0.7357;

/// Minimum photons per stage: one per basis.
pub const N_MIN: u64 = 2;

/// Margin applied to open feasibility endpoints before they are used.
pub const ENDPOINT_MARGIN: f64 = 1e-9;

const BISECTION_TOL: f64 = 1e-9;

/// Checks `s_1 = 1 ≤ s_2 ≤ … ≤ s_K`.
pub fn validate_ladder(s: &[u32]) -> Result<()> {
    match s.first() {
        None => return Err(Error::Ladder("empty ladder".into())),
        Some(&1) => {}
        Some(&first) => return Err(Error::Ladder(format!("ladder must start at 1, got {first}"))),
    }
    if s.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Ladder(format!("ladder must be non-decreasing: {s:?}")));
    }
    Ok(())
}

/// Why a γ sequence failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    /// One-based stage at which the recursion broke.
    pub stage: usize,
    pub reason: String,
}

impl From<Infeasibility> for Error {
    fn from(i: Infeasibility) -> Self {
        Error::Infeasible(format!("stage {}: {}", i.stage, i.reason))
    }
}

/// Runs `γ_i = γ_{i−1}/(γ_{i−1} − s_i/s_{i−1})` from the free value `γ_1`.
/// Assumes a valid ladder.
pub fn gamma_sequence(gamma1: f64, s: &[u32]) -> std::result::Result<Vec<f64>, Infeasibility> {
    if !(gamma1 >= 1.0) || !gamma1.is_finite() {
        return Err(Infeasibility {
            stage: 1,
            reason: format!("γ_1 = {gamma1} is below 1"),
        });
    }
    let mut gamma = Vec::with_capacity(s.len());
    gamma.push(gamma1);
    for i in 1..s.len() {
        let prev = gamma[i - 1];
        let ratio = s[i] as f64 / s[i - 1] as f64;
        let denom = prev - ratio;
        if denom <= 0.0 {
            return Err(Infeasibility {
                stage: i + 1,
                reason: format!("denominator γ_{} − s_{}/s_{} = {denom} is not positive", i, i + 1, i),
            });
        }
        let g = prev / denom;
        if g < 1.0 {
            return Err(Infeasibility {
                stage: i + 1,
                reason: format!("γ_{} = {g} is below 1", i + 1),
            });
        }
        gamma.push(g);
    }
    Ok(gamma)
}

/// Open interval of feasible `γ_1` values (closed at 1 for a single stage).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gamma1Range {
    pub lo: f64,
    /// `f64::INFINITY` when unbounded above.
    pub hi: f64,
}

impl Gamma1Range {
    pub fn is_bounded(&self) -> bool {
        self.hi.is_finite()
    }

    /// Endpoints pulled inwards by [`ENDPOINT_MARGIN`].
    pub fn usable(&self) -> (f64, f64) {
        let lo = if self.lo > 1.0 { self.lo + ENDPOINT_MARGIN } else { self.lo };
        (lo, self.hi - ENDPOINT_MARGIN)
    }
}

/// Exact feasible interval by pulling the constraints back through the
/// recursion. Used to seed the bisection with an interior point.
fn backward_interval(s: &[u32]) -> Option<(f64, f64)> {
    // allowed (lo, hi) for γ_i, starting at the last stage
    let (mut lo, mut hi) = (1.0_f64, f64::INFINITY);
    for i in (1..s.len()).rev() {
        let r = s[i] as f64 / s[i - 1] as f64;
        // inverse of x ↦ x/(x − r), decreasing on (r, ∞)
        let inv = |y: f64| if y <= 1.0 { f64::INFINITY } else if y.is_infinite() { r } else { r * y / (y - 1.0) };
        let (new_lo, new_hi) = (inv(hi).max(r), inv(lo));
        lo = new_lo.max(1.0);
        hi = new_hi;
        if lo >= hi {
            return None;
        }
    }
    Some((lo, hi))
}

/// Locates the feasible `γ_1` interval by bisection on the feasibility
/// predicate. `None` when no `γ_1` works.
pub fn feasible_gamma1_range(s: &[u32]) -> Result<Option<Gamma1Range>> {
    validate_ladder(s)?;
    if s.len() == 1 {
        return Ok(Some(Gamma1Range { lo: 1.0, hi: f64::INFINITY }));
    }
    let Some((lo_seed, hi_seed)) = backward_interval(s) else {
        return Ok(None);
    };
    let feasible = |g: f64| gamma_sequence(g, s).is_ok();
    let interior = if hi_seed.is_finite() { 0.5 * (lo_seed + hi_seed) } else { 2.0 * lo_seed + 1.0 };
    if !feasible(interior) {
        return Ok(None);
    }

    // endpoints are reported on their feasible side, within the tolerance
    let lo = if feasible(1.0) {
        1.0
    } else {
        bisect_predicate(feasible, 1.0, interior, BISECTION_TOL).1
    };

    let mut probe = interior * 2.0;
    let mut hi = f64::INFINITY;
    for _ in 0..60 {
        if !feasible(probe) {
            hi = bisect_predicate(feasible, interior, probe, BISECTION_TOL).0;
            break;
        }
        probe *= 2.0;
    }
    Ok(Some(Gamma1Range { lo, hi }))
}

/// `C(γ) = exp(b·sin²(π/γ))`.
pub fn confidence_factor(gamma: f64, b: f64) -> f64 {
    log_confidence_factor(gamma, b).exp()
}

pub fn log_confidence_factor(gamma: f64, b: f64) -> f64 {
    b * (PI / gamma).sin().powi(2)
}

/// `D_1 … D_{K−1}`, with the cap `D_i = γ_{i−1}s_{i−1}/2` whenever
/// `2πD_i/(γ_{i−1}s_{i−1}) ≥ π`. Uses `γ_0 = s_0 = 1`.
pub fn compute_d(s: &[u32], gamma: &[f64]) -> Vec<f64> {
    let k = s.len();
    let sf: Vec<f64> = s.iter().map(|&x| x as f64).collect();
    let scale = |i: usize| if i == 0 { 1.0 } else { gamma[i - 1] * sf[i - 1] };
    (0..k.saturating_sub(1))
        .map(|i| {
            // i is zero-based: stage i + 1
            let raw = if i == 0 {
                0.5
            } else {
                let inner: f64 = (i..k.saturating_sub(2)).map(|j| 1.0 / (gamma[j] * sf[j])).sum::<f64>()
                    + 1.0 / (2.0 * sf[k - 2] * gamma[k - 2])
                    + 1.0 / (2.0 * sf[k - 1]);
                1.0 + scale(i) * inner
            };
            if 2.0 * PI * raw / scale(i) >= PI {
                scale(i) / 2.0
            } else {
                raw
            }
        })
        .collect()
}

/// A complete strategy: ladder, interval widths and bound coefficients.
///
/// `log_c` and `b_last` carry any visibility rescaling; `b` stays the
/// unscaled concentration constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub s: Vec<u32>,
    pub gamma: Vec<f64>,
    pub b: f64,
    pub d: Vec<f64>,
    pub log_c: Vec<f64>,
    pub b_last: f64,
    pub visibility: Vec<f64>,
}

impl Schedule {
    pub fn new(s: &[u32], gamma1: f64, b: f64) -> Result<Self> {
        validate_ladder(s)?;
        if !(b > 0.0) {
            return Err(Error::Config(format!("concentration constant b = {b} must be positive")));
        }
        let gamma = gamma_sequence(gamma1, s)?;
        let d = compute_d(s, &gamma);
        let log_c = gamma.iter().map(|&g| log_confidence_factor(g, b)).collect();
        Ok(Schedule {
            s: s.to_vec(),
            d,
            log_c,
            gamma,
            b,
            b_last: b,
            visibility: vec![1.0; s.len()],
        })
    }

    pub fn stages(&self) -> usize {
        self.s.len()
    }

    pub fn s_last(&self) -> f64 {
        *self.s.last().expect("non-empty ladder") as f64
    }

    /// `γ_{i−1}s_{i−1}` for zero-based stage `i`, with `γ_0 = s_0 = 1`.
    pub fn prev_scale(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.gamma[i - 1] * self.s[i - 1] as f64
        }
    }

    /// Half-width `π/(s_i γ_i)` of the interval selected at zero-based stage `i`.
    pub fn half_width(&self, i: usize) -> f64 {
        PI / (self.s[i] as f64 * self.gamma[i])
    }

    /// Squared prefactors `(2πD_i/(γ_{i−1}s_{i−1}))²` of the localization terms.
    pub fn localization_weights(&self) -> Vec<f64> {
        self.d
            .iter()
            .enumerate()
            .map(|(i, &d)| (2.0 * PI * d / self.prev_scale(i)).powi(2))
            .collect()
    }

    /// `Σ s_i n_i`.
    pub fn resources(&self, n: &[u64]) -> u64 {
        self.s.iter().zip(n).map(|(&s, &n)| s as u64 * n).sum()
    }

    pub fn min_resources(&self) -> u64 {
        self.s.iter().map(|&s| s as u64 * N_MIN).sum()
    }
}

/// Bound on the squared phase error, evaluated for real-valued photon
/// counts. No validation; see [`error_upper_bound`].
pub fn bound_continuous(schedule: &Schedule, n: &[f64], a: f64) -> f64 {
    let k = schedule.stages();
    let s_k = schedule.s_last();
    let b = schedule.b_last;
    let n_k = n[k - 1];
    let last = a * PI * PI / (2.0 * b * n_k * s_k * s_k) + 3.0 * a * PI * PI / (4.0 * s_k * s_k) * (-b * n_k / 2.0).exp();
    let localization: f64 = schedule
        .localization_weights()
        .iter()
        .zip(&schedule.log_c)
        .zip(n)
        .map(|((w, lc), &n_i)| w * a * (-lc * n_i / 2.0).exp())
        .sum();
    last + localization
}

/// Upper bound on `Δ²φ̂` for the allocation `n`.
pub fn error_upper_bound(schedule: &Schedule, n: &[u64], a: f64) -> Result<f64> {
    if n.len() != schedule.stages() {
        return Err(Error::Config(format!(
            "{} photon counts for a {}-stage schedule",
            n.len(),
            schedule.stages()
        )));
    }
    for (i, &n_i) in n.iter().enumerate() {
        if n_i % 2 != 0 || n_i < N_MIN {
            return Err(Error::PhotonCount { stage: i + 1, n: n_i, min: N_MIN });
        }
    }
    let nf: Vec<f64> = n.iter().map(|&x| x as f64).collect();
    Ok(bound_continuous(schedule, &nf, a))
}
