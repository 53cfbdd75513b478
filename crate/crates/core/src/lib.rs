//! Non-adaptive multi-stage phase estimation at Heisenberg scaling.
//!
//! A ladder of resource multipliers `s_1 = 1 ≤ s_2 ≤ … ≤ s_K` is measured
//! stage by stage with `n_i` photons each, split between two polarization
//! bases. Each stage yields `s_i·φ` modulo `2π`; the disambiguation pass in
//! [`estimator`] stitches them into one phase estimate. [`schedule`] builds
//! the interval widths and the error bound, [`allocator`] distributes a
//! resource budget `N = Σ s_i n_i`, [`simulator`] draws measurement records,
//! and [`campaign`] with [`analysis`] turn repeated runs into precision
//! curves and scaling exponents.

pub mod allocator;
pub mod analysis;
pub mod campaign;
pub mod config;
pub mod error;
pub mod estimator;
pub mod model;
pub mod optim;
pub mod report;
pub mod schedule;
pub mod simulator;

pub use error::{Error, Result};
