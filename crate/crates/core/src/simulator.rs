//! Stochastic stand-in for the apparatus: binomial counts in the two
//! bases, drawn from reproducible random substreams.
//!
//! Stream assignment: every `(budget, angle, run)` triple owns one ChaCha8
//! stream keyed by the campaign seed. The stream id packs the budget, the
//! angle index and the run index (angle-major, run-minor); stages consume
//! the stream in order. Results therefore do not depend on which thread
//! handles which run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::allocator::ResourcePlan;
use crate::error::{Error, Result};
use crate::estimator::{algorithm1, EstimationRun};
use crate::model::{ambiguous_estimate_from_frequencies, ambiguous_estimator, check_visibility, outcome_probabilities, Angle, MeasurementBatch, StageConfig};

const RUN_BITS: u32 = 20;
const ANGLE_BITS: u32 = 20;

/// Stream id for one protocol run.
pub fn stream_id(budget: u64, angle_index: usize, run: usize) -> u64 {
    debug_assert!((run as u64) < 1 << RUN_BITS && (angle_index as u64) < 1 << ANGLE_BITS);
    debug_assert!(budget < 1 << (64 - RUN_BITS - ANGLE_BITS));
    (budget << (RUN_BITS + ANGLE_BITS)) | ((angle_index as u64) << RUN_BITS) | run as u64
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Settings of one simulated protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub theta_true: Angle,
    /// Visibility per stage of the plan being run.
    pub visibilities: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
    /// Detection efficiency. 1 in the post-selected regime.
    pub eta: f64,
}

impl SimConfig {
    pub fn new(theta_true: Angle, visibilities: Vec<f64>, seed: u64, stream: u64) -> Self {
        SimConfig {
            theta_true,
            visibilities,
            seed,
            stream,
            eta: 1.0,
        }
    }
}

fn binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> u64 {
    let p = p.clamp(0.0, 1.0);
    Binomial::new(trials, p).expect("probability clamped to [0, 1]").sample(rng)
}

/// Draws the HV and DA counts of one stage.
pub fn sample_stage<R: Rng + ?Sized>(stage: &StageConfig, theta_true: Angle, rng: &mut R) -> Result<MeasurementBatch> {
    sample_stage_lossy(stage, theta_true, 1.0, rng)
}

/// As [`sample_stage`], with each photon detected independently with
/// probability `eta` before being counted.
pub fn sample_stage_lossy<R: Rng + ?Sized>(
    stage: &StageConfig,
    theta_true: Angle,
    eta: f64,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    if stage.n < 2 || stage.n % 2 != 0 {
        return Err(Error::PhotonCount { stage: 0, n: stage.n, min: 2 });
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Config(format!("detection efficiency {eta} outside (0, 1]")));
    }
    let p = outcome_probabilities(stage.s, theta_true, stage.v)?;
    let half = stage.per_basis();
    let (hv, da) = if eta < 1.0 {
        (binomial(half, eta, rng), binomial(half, eta, rng))
    } else {
        (half, half)
    };
    let h = binomial(hv, p.p_hv, rng);
    let d = binomial(da, p.p_da, rng);
    Ok(MeasurementBatch {
        h,
        v: hv - h,
        d,
        a: da - d,
    })
}

fn stage_configs(plan: &ResourcePlan, visibilities: &[f64]) -> Result<Vec<StageConfig>> {
    let k = plan.schedule.stages();
    if visibilities.len() != k {
        return Err(Error::Config(format!("{} visibilities for a {k}-stage plan", visibilities.len())));
    }
    plan.schedule
        .s
        .iter()
        .zip(&plan.n)
        .zip(visibilities)
        .map(|((&s, &n), &v)| {
            check_visibility(v)?;
            StageConfig::new(s, n, v)
        })
        .collect()
}

/// Measurement record plus the disambiguation trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRun {
    pub batches: Vec<MeasurementBatch>,
    pub run: EstimationRun,
}

/// Samples every stage of `plan` independently, then disambiguates.
pub fn run_protocol_traced(plan: &ResourcePlan, config: &SimConfig) -> Result<SimulatedRun> {
    let stages = stage_configs(plan, &config.visibilities)?;
    let mut rng = stream_rng(config.seed, config.stream);
    let mut batches = Vec::with_capacity(stages.len());
    let mut estimates = Vec::with_capacity(stages.len());
    for stage in &stages {
        let batch = sample_stage_lossy(stage, config.theta_true, config.eta, &mut rng)?;
        let estimate = if batch.hv_total() == 0 || batch.da_total() == 0 {
            // all photons lost in a basis: no information, estimate 0
            0.0
        } else {
            ambiguous_estimator(&batch)?.phase
        };
        estimates.push(estimate);
        batches.push(batch);
    }
    let run = algorithm1(&estimates, &plan.schedule)?;
    Ok(SimulatedRun { batches, run })
}

pub fn run_protocol_once(plan: &ResourcePlan, config: &SimConfig) -> Result<EstimationRun> {
    Ok(run_protocol_traced(plan, config)?.run)
}

/// Forward pass with frequencies set to the exact outcome probabilities.
pub fn run_protocol_noiseless(plan: &ResourcePlan, theta_true: Angle, visibilities: &[f64]) -> Result<EstimationRun> {
    let stages = stage_configs(plan, visibilities)?;
    let estimates = stages
        .iter()
        .map(|stage| {
            let p = outcome_probabilities(stage.s, theta_true, stage.v)?;
            Ok(ambiguous_estimate_from_frequencies(p.p_hv, p.p_da).phase)
        })
        .collect::<Result<Vec<_>>>()?;
    algorithm1(&estimates, &plan.schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::optimize_allocation;
    use crate::model::{circular_distance, phase_difference};
    use crate::schedule::{Schedule, DEFAULT_B};
    use std::f64::consts::PI;

    #[test]
    fn degenerate_probabilities() {
        let mut rng = stream_rng(7, 0);
        let stage = StageConfig::new(1, 40, 1.0).unwrap();
        for _ in 0..100 {
            let b = sample_stage(&stage, Angle::new(0.0), &mut rng).unwrap();
            assert_eq!(b.h, 20);
            assert_eq!(b.v, 0);
        }
        let stage = StageConfig::new(51, 40, 1.0).unwrap();
        for _ in 0..100 {
            let b = sample_stage(&stage, Angle::new(PI / 102.0), &mut rng).unwrap();
            assert_eq!(b.h, 0);
            assert_eq!(b.hv_total(), 20);
            assert_eq!(b.da_total(), 20);
        }
    }

    #[test]
    fn empirical_frequency_matches_probability() {
        let mut rng = stream_rng(11, 3);
        let stage = StageConfig::new(2, 20, 0.8).unwrap();
        let draws = 100_000;
        let half = 10.0;
        let total: u64 = (0..draws)
            .map(|_| sample_stage(&stage, Angle::new(PI / 8.0), &mut rng).unwrap().h)
            .sum();
        let mean = total as f64 / (draws as f64 * half);
        let p = 0.5;
        let sigma = (p * (1.0 - p) / (draws as f64 * half)).sqrt();
        assert!((mean - p).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn rejects_odd_or_tiny_stage() {
        let mut rng = stream_rng(1, 1);
        let stage = StageConfig { s: 1, n: 0, v: 1.0 };
        assert!(sample_stage(&stage, Angle::new(0.1), &mut rng).is_err());
    }

    #[test]
    fn lossy_counts_are_thinned() {
        let mut rng = stream_rng(5, 5);
        let stage = StageConfig::new(1, 2000, 1.0).unwrap();
        let b = sample_stage_lossy(&stage, Angle::new(0.4), 0.5, &mut rng).unwrap();
        assert!(b.hv_total() < 1000 && b.hv_total() > 400);
    }

    #[test]
    fn large_single_stage_concentrates() {
        let sch = Schedule::new(&[1], 2.0, DEFAULT_B).unwrap();
        let plan = optimize_allocation(&sch, 10_000).unwrap();
        let theta = 0.3;
        let trials = 2000;
        let hits = (0..trials)
            .filter(|&r| {
                let cfg = SimConfig::new(Angle::new(theta), vec![1.0], 99, stream_id(10_000, 0, r));
                let run = run_protocol_once(&plan, &cfg).unwrap();
                circular_distance(run.final_theta.value(), theta) < 0.05
            })
            .count();
        assert!(hits as f64 / trials as f64 >= 0.99);
    }

    #[test]
    fn noiseless_forward_pass_lands_in_final_interval() {
        let sch = Schedule::new(&[1, 2, 11, 51], 2.4, DEFAULT_B).unwrap();
        let plan = optimize_allocation(&sch, 5000).unwrap();
        let half_width = PI / (51.0 * sch.gamma[3]);
        for k in 0..100 {
            let theta = Angle::new((k as f64 + 0.5) * PI / 100.0);
            let run = run_protocol_noiseless(&plan, theta, &[1.0; 4]).unwrap();
            assert!(phase_difference(run.final_phi, theta.phase()).abs() < half_width / 2.0);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let sch = Schedule::new(&[1, 2, 11, 51], 2.4, DEFAULT_B).unwrap();
        let plan = optimize_allocation(&sch, 3000).unwrap();
        let cfg = SimConfig::new(Angle::new(1.1), vec![0.95; 4], 2024, stream_id(3000, 4, 17));
        let a = run_protocol_traced(&plan, &cfg).unwrap();
        let b = run_protocol_traced(&plan, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let other = SimConfig { stream: stream_id(3000, 4, 18), ..cfg };
        assert_ne!(run_protocol_traced(&plan, &other).unwrap().batches, a.batches);
    }

    #[test]
    fn stream_ids_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for n in [2u64, 3, 30_000] {
            for j in 0..17 {
                for r in 0..200 {
                    assert!(seen.insert(stream_id(n, j, r)));
                }
            }
        }
    }
}
