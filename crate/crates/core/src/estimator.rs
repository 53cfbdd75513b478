//! Stage-by-stage disambiguation of the ambiguous estimates `ψ̂_i ≈ s_i·φ`
//! into a single phase estimate.
//!
//! Each stage offers `s_i` candidates `ψ̂_i/s_i + 2πk/s_i`. The candidate is
//! placed next to the lower edge of the previous stage's interval, then one
//! of three windows decides whether to step it down, up, or keep it. The
//! γ schedule makes exactly one candidate fall within `π/s_i` of the
//! previous estimate.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{phase_difference, Angle};
use crate::schedule::Schedule;

/// Which correction the window test applied at a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `φ̂ ← ξ̂ − 2π/s_i`
    Minus,
    /// `φ̂ ← ξ̂ + 2π/s_i`
    Plus,
    /// `φ̂ ← ξ̂`
    Center,
}

/// Trace of one pass of the disambiguation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRun {
    pub stage_estimates: Vec<f64>,
    pub running_phi: Vec<f64>,
    pub branch_taken: Vec<Branch>,
    pub final_phi: f64,
    pub final_theta: Angle,
}

/// Runs the disambiguation over `stage_estimates` (one per stage, each in
/// `[0, 2π)`).
pub fn algorithm1(stage_estimates: &[f64], schedule: &Schedule) -> Result<EstimationRun> {
    run(stage_estimates, schedule, false)
}

/// Like [`algorithm1`], but evaluates both shifted windows at every stage and
/// fails if they ever overlap on the given data.
pub fn algorithm1_validated(stage_estimates: &[f64], schedule: &Schedule) -> Result<EstimationRun> {
    run(stage_estimates, schedule, true)
}

fn run(stage_estimates: &[f64], schedule: &Schedule, validate: bool) -> Result<EstimationRun> {
    let k = schedule.stages();
    if stage_estimates.len() != k {
        return Err(Error::Config(format!(
            "{} stage estimates for a {k}-stage schedule",
            stage_estimates.len()
        )));
    }
    let mut phi = 0.0_f64;
    let mut running_phi = Vec::with_capacity(k);
    let mut branch_taken = Vec::with_capacity(k);

    for (i, &psi) in stage_estimates.iter().enumerate() {
        let s = schedule.s[i] as f64;
        let gamma = schedule.gamma[i];
        let prev = schedule.prev_scale(i);

        let mut xi = psi / s;
        let m = (s * phi / TAU - 0.5 * s / prev).floor();
        xi += TAU * m / s;

        let slack = PI / prev;
        let inner = PI * (2.0 * gamma - 1.0) / (s * gamma);
        let outer = PI * (2.0 * gamma + 1.0) / (s * gamma);
        let in_upper = phi + inner - slack < xi && xi < phi + outer + slack;
        let in_lower = phi - outer - slack < xi && xi < phi - inner + slack;
        if validate && in_upper && in_lower {
            return Err(Error::Infeasible(format!(
                "stage {}: both shifted windows contain ξ̂ = {xi}",
                i + 1
            )));
        }

        let (next, branch) = if in_upper {
            (xi - TAU / s, Branch::Minus)
        } else if in_lower {
            (xi + TAU / s, Branch::Plus)
        } else {
            (xi, Branch::Center)
        };
        phi = next - TAU * (next / TAU).floor();
        if phi >= TAU {
            phi = 0.0;
        }
        running_phi.push(phi);
        branch_taken.push(branch);
    }

    Ok(EstimationRun {
        stage_estimates: stage_estimates.to_vec(),
        running_phi,
        branch_taken,
        final_phi: phi,
        final_theta: Angle::from_phase(phi),
    })
}

/// Marks stage `i` failed when its selected interval, of half-width
/// `π/(s_i γ_i)` around the running estimate, misses `phi_true` (mod 2π).
pub fn stage_failure_flag(run: &EstimationRun, schedule: &Schedule, phi_true: f64) -> Vec<bool> {
    run.running_phi
        .iter()
        .enumerate()
        .map(|(i, &phi)| phase_difference(phi, phi_true).abs() >= schedule.half_width(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::wrap_phase;
    use crate::schedule::DEFAULT_B;

    fn ladder() -> Schedule {
        Schedule::new(&[1, 2, 11, 51], 2.4, DEFAULT_B).unwrap()
    }

    fn exact_estimates(phi: f64, schedule: &Schedule) -> Vec<f64> {
        schedule.s.iter().map(|&s| wrap_phase(s as f64 * phi)).collect()
    }

    #[test]
    fn single_stage_passthrough() {
        for gamma1 in [1.0, 2.0, 7.5] {
            let sch = Schedule::new(&[1], gamma1, DEFAULT_B).unwrap();
            for k in 0..200 {
                let psi = k as f64 * TAU / 200.0;
                let run = algorithm1(&[psi], &sch).unwrap();
                assert!(phase_difference(run.final_phi, psi).abs() < 1e-12);
                assert!(run.final_phi < TAU);
            }
        }
    }

    #[test]
    fn noiseless_chain_recovers_phase() {
        let sch = ladder();
        let run = algorithm1(&exact_estimates(1.234, &sch), &sch).unwrap();
        assert!((run.final_phi - 1.234).abs() < 1e-9);
        assert!((run.final_theta.value() - 0.617).abs() < 1e-9);
        assert_eq!(run.running_phi.len(), 4);
        assert_eq!(run.branch_taken.len(), 4);
        assert!(stage_failure_flag(&run, &sch, 1.234).iter().all(|f| !f));
    }

    #[test]
    fn displaced_first_stage_is_flagged() {
        let sch = ladder();
        let phi = 1.234;
        let mut est = exact_estimates(phi, &sch);
        est[0] = wrap_phase(est[0] + PI);
        let run = algorithm1(&est, &sch).unwrap();
        let flags = stage_failure_flag(&run, &sch, phi);
        assert!(flags[0]);
    }

    #[test]
    fn perturbed_chain_stays_within_final_interval() {
        // every stage off by δ_i with |δ_i| < π/γ_i; all sign patterns
        let sch = ladder();
        for fraction in [0.3, 0.9, 0.999] {
            for pattern in 0..16u32 {
                for k in 0..50 {
                    let phi = (k as f64 + 0.5) * TAU / 50.0;
                    let delta: Vec<f64> = (0..4)
                        .map(|i| {
                            let sign = if pattern >> i & 1 == 1 { 1.0 } else { -1.0 };
                            sign * fraction * PI / sch.gamma[i]
                        })
                        .collect();
                    let est: Vec<f64> = sch
                        .s
                        .iter()
                        .zip(&delta)
                        .map(|(&s, d)| wrap_phase(s as f64 * phi + d))
                        .collect();
                    let run = algorithm1_validated(&est, &sch).unwrap();
                    let err = phase_difference(run.final_phi, phi).abs();
                    let s_k = 51.0;
                    let limit = sch.half_width(3) + delta[3].abs() / s_k;
                    assert!(err <= limit + 1e-9, "φ={phi} pattern={pattern} err={err} limit={limit}");
                    // correct selection leaves only the last-stage offset
                    assert!((err - delta[3].abs() / s_k).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn wrap_equivariance() {
        let sch = ladder();
        for k in 0..300 {
            let phi = k as f64 * TAU / 300.0;
            let a = algorithm1(&exact_estimates(phi, &sch), &sch).unwrap();
            let b = algorithm1(&exact_estimates(wrap_phase(phi + TAU), &sch), &sch).unwrap();
            assert!(phase_difference(a.final_phi, b.final_phi).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(algorithm1(&[0.1, 0.2], &ladder()).is_err());
    }
}
