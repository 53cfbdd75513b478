//! JSON configuration shared by the command-line front end and campaigns.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::allocator::StrategyCatalog;
use crate::analysis::ErrorBarMethod;
use crate::error::{Error, Result};
use crate::model::check_visibility;
use crate::schedule::{validate_ladder, DEFAULT_B};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderSection {
    pub multipliers: Vec<u32>,
    pub b: f64,
}

impl Default for LadderSection {
    fn default() -> Self {
        LadderSection {
            multipliers: vec![1, 2, 11, 51],
            b: DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilitySection {
    pub default: f64,
    /// Overrides keyed by multiplier.
    pub per_multiplier: BTreeMap<u32, f64>,
}

impl Default for VisibilitySection {
    fn default() -> Self {
        VisibilitySection {
            default: 1.0,
            per_multiplier: BTreeMap::new(),
        }
    }
}

impl VisibilitySection {
    pub fn of(&self, s: u32) -> f64 {
        self.per_multiplier.get(&s).copied().unwrap_or(self.default)
    }

    pub fn for_ladder(&self, ladder: &[u32]) -> Vec<f64> {
        ladder.iter().map(|&s| self.of(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub min: u64,
    pub max: u64,
    /// Geometric base points before rounding to even budgets.
    pub points: usize,
    /// Extra even budgets on each side of every upgrade point.
    pub densify: usize,
    /// Replaces the generated grid when present.
    pub explicit: Option<Vec<u64>>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            min: 2,
            max: 30_000,
            points: 170,
            densify: 2,
            explicit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum UpgradeMode {
    /// First budget where a longer prefix lowers the optimized error bound.
    Bound,
    /// First budget where a longer prefix lowers the simulated RMSE.
    Simulated { runs: usize, angles: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub runs: usize,
    pub angles: usize,
    pub seed: u64,
    /// Strategy ids such as `s1`, `s1-2` or `s1-2-11-51`.
    pub strategies: Vec<String>,
    pub upgrade: UpgradeMode,
    /// Photon survival probability; 1 is lossless.
    pub eta: f64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            runs: 200,
            angles: 17,
            seed: 2024,
            strategies: vec!["s1".into(), "s1-2".into(), "s1-2-11".into(), "s1-2-11-51".into()],
            upgrade: UpgradeMode::Bound,
            eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub batch_size: usize,
    pub global_start: u64,
    pub outlier_k: f64,
    pub remove_outliers: bool,
    pub error_bar: ErrorBarMethod,
    /// Inclusive budget ranges for the local analysis.
    pub regions: Vec<(u64, u64)>,
    /// Minimum length of the sliding windows tested against α = 1.
    pub window_points: usize,
    pub sigma_level: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            batch_size: 10,
            global_start: 62,
            outlier_k: 4.0,
            remove_outliers: true,
            error_bar: ErrorBarMethod::Literal,
            regions: vec![(2, 60), (62, 264), (266, 554), (556, 1770), (1772, 2996), (2998, 30_000)],
            window_points: 8,
            sigma_level: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ladder: LadderSection,
    pub visibilities: VisibilitySection,
    pub grid: GridSection,
    pub campaign: CampaignSection,
    pub analysis: AnalysisSection,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and validates JSON text. `"//"` note keys are ignored.
    pub fn parse(text: &str) -> Result<Config> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(top) = value.as_object_mut() {
            top.remove("//");
            for section in top.values_mut() {
                if let Some(obj) = section.as_object_mut() {
                    obj.remove("//");
                }
            }
        }
        let config: Config = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        validate_ladder(&self.ladder.multipliers)?;
        if !(self.ladder.b > 0.0) {
            return Err(Error::Config(format!("b = {} must be positive", self.ladder.b)));
        }
        check_visibility(self.visibilities.default)?;
        for &v in self.visibilities.per_multiplier.values() {
            check_visibility(v)?;
        }
        if self.grid.explicit.is_none() && (self.grid.min < 2 || self.grid.max < self.grid.min || self.grid.points < 2) {
            return Err(Error::Config("grid needs 2 ≤ min ≤ max and at least 2 points".into()));
        }
        if let Some(g) = &self.grid.explicit {
            if g.is_empty() || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("explicit grid must be non-empty and strictly ascending".into()));
            }
        }
        if self.campaign.runs < 2 {
            return Err(Error::Config("campaign needs at least 2 runs per angle".into()));
        }
        if self.campaign.angles < 1 {
            return Err(Error::Config("campaign needs at least one angle".into()));
        }
        if !(self.campaign.eta > 0.0 && self.campaign.eta <= 1.0) {
            return Err(Error::Config(format!("eta = {} outside (0, 1]", self.campaign.eta)));
        }
        if self.campaign.strategies.is_empty() {
            return Err(Error::Config("no strategies listed".into()));
        }
        for id in &self.campaign.strategies {
            parse_strategy(id)?;
        }
        if self.analysis.batch_size < 3 || self.analysis.window_points < 3 {
            return Err(Error::Config("fits need at least 3 points".into()));
        }
        Ok(())
    }

    /// Strategy ladders with their visibilities.
    pub fn strategies(&self) -> Result<Vec<(String, Vec<u32>, Vec<f64>)>> {
        self.campaign
            .strategies
            .iter()
            .map(|id| {
                let ladder = parse_strategy(id)?;
                let v = self.visibilities.for_ladder(&ladder);
                Ok((strategy_id(&ladder), ladder, v))
            })
            .collect()
    }

    /// The configured budget grid; generated grids are densified around the
    /// upgrade points of `catalogs`.
    pub fn budget_grid(&self, catalogs: &[StrategyCatalog]) -> Vec<u64> {
        if let Some(g) = &self.grid.explicit {
            return g.clone();
        }
        let upgrades: Vec<u64> = catalogs.iter().flat_map(|c| c.upgrade_points.iter().flatten().copied()).collect();
        budget_grid(self.grid.min, self.grid.max, self.grid.points, &upgrades, self.grid.densify)
    }

    /// `θ_j = (j + ½)·π/J`.
    pub fn angles(&self) -> Vec<f64> {
        angle_grid(self.campaign.angles)
    }
}

pub fn angle_grid(j: usize) -> Vec<f64> {
    (0..j).map(|k| (k as f64 + 0.5) * PI / j as f64).collect()
}

/// Even budgets spaced geometrically between `min` and `max`, plus
/// `densify` even neighbours on each side of every upgrade point.
pub fn budget_grid(min: u64, max: u64, points: usize, upgrades: &[u64], densify: usize) -> Vec<u64> {
    let even = |x: f64| (2 * (x / 2.0).round() as u64).clamp(min.max(2), max);
    let ratio = (max as f64 / min as f64).ln() / (points - 1) as f64;
    let mut grid: Vec<u64> = (0..points).map(|k| even(min as f64 * (ratio * k as f64).exp())).collect();
    for &u in upgrades {
        for d in 0..=densify as u64 {
            for candidate in [u.saturating_sub(2 * d), u + 2 * d] {
                if candidate >= min && candidate <= max {
                    grid.push(candidate);
                }
            }
        }
    }
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Parses `s1`, `s1-2-11` or `s1-only` into a ladder.
pub fn parse_strategy(id: &str) -> Result<Vec<u32>> {
    let body = id
        .strip_prefix('s')
        .ok_or_else(|| Error::Config(format!("strategy id {id:?} must start with 's'")))?;
    let body = body.strip_suffix("-only").unwrap_or(body);
    let ladder = body
        .split('-')
        .map(|t| t.parse::<u32>().map_err(|_| Error::Config(format!("bad multiplier {t:?} in strategy {id:?}"))))
        .collect::<Result<Vec<_>>>()?;
    validate_ladder(&ladder)?;
    Ok(ladder)
}

pub fn strategy_id(ladder: &[u32]) -> String {
    let parts: Vec<String> = ladder.iter().map(u32::to_string).collect();
    format!("s{}", parts.join("-"))
}

/// Default configuration as JSON with a `"//"` note in each section.
pub fn documented_default() -> Value {
    let mut value = serde_json::to_value(Config::default()).expect("default config serializes");
    let notes = [
        ("ladder", "multipliers s_i of the full ladder (must start at 1, non-decreasing); b: confidence constant of the error bound"),
        ("visibilities", "fringe visibility in (0, 1]; per_multiplier overrides the default for a given s"),
        ("grid", "budgets N: `points` geometric values from min to max rounded to even, plus `densify` even neighbours around each upgrade point; `explicit` replaces all of it"),
        ("campaign", "runs R per (N, angle); angles J with θ_j = (j + 1/2)π/J; strategies are ladder ids; upgrade: {\"mode\": \"bound\"} or {\"mode\": \"simulated\", \"runs\": R, \"angles\": J}; eta: photon survival probability"),
        ("analysis", "batch_size: points per cumulative batch; global_start: first N of the global fit; outlier_k: standardized residual threshold; error_bar: literal or delta; regions: local-analysis windows; window_points: sliding-window length tested against α = 1 at sigma_level"),
    ];
    for (section, note) in notes {
        if let Some(obj) = value.get_mut(section).and_then(Value::as_object_mut) {
            obj.insert("//".into(), json!(note));
        }
    }
    value
}
