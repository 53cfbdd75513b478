//! Shared vocabulary: angles, stage settings, measurement counts, outcome
//! probabilities and the single-stage ambiguous estimator.
//!
//! Two angle conventions coexist. The physical rotation `θ` lives in
//! `[0, π)`; the working phase `φ = 2θ` lives in `[0, 2π)`. A stage with
//! multiplier `s` measures `s·φ mod 2π`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation angle in radians, reduced to `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Angle(f64);

impl Angle {
    pub fn new(theta: f64) -> Self {
        Angle(wrap(theta, PI))
    }

    /// Rotation angle corresponding to the phase `φ`, i.e. `φ/2`.
    pub fn from_phase(phi: f64) -> Self {
        Angle::new(phi / 2.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Working phase `2θ ∈ [0, 2π)`.
    pub fn phase(self) -> f64 {
        wrap(2.0 * self.0, TAU)
    }
}

/// Reduces `x` into `[0, period)`.
pub fn wrap(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    // rem_euclid can round up to `period` for tiny negative inputs
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Reduces a phase into `[0, 2π)`.
pub fn wrap_phase(x: f64) -> f64 {
    wrap(x, TAU)
}

/// Signed distance `a − b` folded into `[−π, π)`.
pub fn phase_difference(a: f64, b: f64) -> f64 {
    wrap(a - b + PI, TAU) - PI
}

pub fn check_visibility(v: f64) -> Result<f64> {
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(Error::Visibility(v))
    }
}

/// One rung of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Quantum-resource multiplier `s = m + 1`.
    pub s: u32,
    /// Photons in the stage, split evenly between the two bases.
    pub n: u64,
    pub v: f64,
}

impl StageConfig {
    pub fn new(s: u32, n: u64, v: f64) -> Result<Self> {
        if s < 1 {
            return Err(Error::Multiplier(s));
        }
        if n % 2 != 0 {
            return Err(Error::PhotonCount { stage: 0, n, min: 0 });
        }
        check_visibility(v)?;
        Ok(StageConfig { s, n, v })
    }

    /// Photons measured in each basis.
    pub fn per_basis(&self) -> u64 {
        self.n / 2
    }

    /// Topological charge `q = (s − 1)/2` of the plate pair producing `s`.
    pub fn topological_charge(&self) -> f64 {
        (self.s as f64 - 1.0) / 2.0
    }
}

/// Raw counts of one stage in the HV and DA bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeasurementBatch {
    pub h: u64,
    pub v: u64,
    pub d: u64,
    pub a: u64,
}

impl MeasurementBatch {
    pub fn hv_total(&self) -> u64 {
        self.h + self.v
    }

    pub fn da_total(&self) -> u64 {
        self.d + self.a
    }

    /// Observed frequencies of `H` and `D`.
    pub fn frequencies(&self) -> Result<(f64, f64)> {
        if self.hv_total() == 0 || self.da_total() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok((
            self.h as f64 / self.hv_total() as f64,
            self.d as f64 / self.da_total() as f64,
        ))
    }
}

/// Outcome probabilities of `H` (in HV) and `D` (in DA).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub p_hv: f64,
    pub p_da: f64,
}

pub fn outcome_probabilities(s: u32, theta: Angle, v: f64) -> Result<Probabilities> {
    if s < 1 {
        return Err(Error::Multiplier(s));
    }
    check_visibility(v)?;
    let arg = 2.0 * s as f64 * theta.value();
    Ok(Probabilities {
        p_hv: 0.5 * (1.0 + v * arg.cos()),
        p_da: 0.5 * (1.0 + v * arg.sin()),
    })
}

/// Result of the single-stage estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousEstimate {
    /// Estimate of `s·φ mod 2π`, in `[0, 2π)`.
    pub phase: f64,
    /// Set when both de-biased frequencies are exactly zero and the phase
    /// carries no information.
    pub degenerate: bool,
}

/// Estimates `s·φ mod 2π` from observed frequencies. HV carries the cosine
/// and DA the sine.
pub fn ambiguous_estimate_from_frequencies(f_hv: f64, f_da: f64) -> AmbiguousEstimate {
    let c = 2.0 * f_hv - 1.0;
    let s = 2.0 * f_da - 1.0;
    if c == 0.0 && s == 0.0 {
        return AmbiguousEstimate {
            phase: 0.0,
            degenerate: true,
        };
    }
    AmbiguousEstimate {
        phase: wrap_phase(s.atan2(c)),
        degenerate: false,
    }
}

pub fn ambiguous_estimator(batch: &MeasurementBatch) -> Result<AmbiguousEstimate> {
    let (f_hv, f_da) = batch.frequencies()?;
    Ok(ambiguous_estimate_from_frequencies(f_hv, f_da))
}

/// Circular error between two rotation angles on the period-`π` circle,
/// in `[0, π/2]`.
pub fn circular_distance(estimate: f64, truth: f64) -> f64 {
    let half = PI / 2.0;
    let d = half - (wrap(truth - estimate, PI) - half).abs();
    d.max(0.0)
}
