use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::profile::WeeklyProfile;
use super::SimError;

/// Backing tiers a mid-sized memory configuration is served from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierMixing {
    pub backing_tiers: Vec<u32>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendStep {
    pub time: DateTime<Utc>,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierEvent {
    pub time: DateTime<Utc>,
    pub duration_h: f64,
    pub factor: f64,
}

impl OutlierEvent {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        let end =
            self.time + Duration::milliseconds((self.duration_h * 3_600_000.0).round() as i64);
        t >= self.time && t < end
    }
}

fn default_timezone() -> String {
    "CET".into()
}
fn default_keep_alive() -> f64 {
    900.0
}
fn default_cold_mean() -> f64 {
    9.5
}
fn default_cold_sd() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.05
}

/// Parameterization of the simulated platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub seed: u64,
    /// Zone the weekly profiles are expressed in.
    #[serde(default = "default_timezone")]
    pub timezone: String,
    /// memory_mb -> warm service time in ms at profile factor 1.
    pub tiers: BTreeMap<u32, f64>,
    pub diurnal_profile: WeeklyProfile,
    pub eviction_profile: WeeklyProfile,
    #[serde(default = "default_keep_alive")]
    pub keep_alive_s: f64,
    #[serde(default = "default_cold_mean")]
    pub cold_multiplier_mean: f64,
    #[serde(default = "default_cold_sd")]
    pub cold_multiplier_sd: f64,
    #[serde(default)]
    pub mid_tier_mixing: BTreeMap<u32, TierMixing>,
    #[serde(default)]
    pub trend_steps: Vec<TrendStep>,
    #[serde(default)]
    pub outlier_events: Vec<OutlierEvent>,
    #[serde(default = "default_noise")]
    pub noise_cv: f64,
}

const PAPER_GCF: &str = include_str!("../../scenarios/paper-gcf.json");

impl SimScenario {
    /// The shipped `paper-gcf.json` scenario.
    pub fn paper_default() -> Self {
        let s: SimScenario = serde_json::from_str(PAPER_GCF).expect("bundled scenario parses");
        s.validate().expect("bundled scenario is valid");
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: SimScenario =
            serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        crate::time::parse_tz(&self.timezone).map_err(|e| SimError::Config(e.to_string()))?;
        if self.tiers.is_empty() {
            return bad("at least one tier is required".into());
        }
        for (&mem, &base) in &self.tiers {
            if mem == 0 || mem % 128 != 0 {
                return bad(format!("tier {mem} is not a positive multiple of 128"));
            }
            if !(base > 0.0) || !base.is_finite() {
                return bad(format!(
                    "tier {mem} base duration must be positive, got {base}"
                ));
            }
        }
        self.diurnal_profile
            .validate()
            .map_err(|e| SimError::Config(format!("diurnal_profile: {e}")))?;
        if let Some(v) = self.diurnal_profile.values.iter().find(|v| **v <= 0.0) {
            return bad(format!("diurnal_profile values must be positive, got {v}"));
        }
        self.eviction_profile
            .validate()
            .map_err(|e| SimError::Config(format!("eviction_profile: {e}")))?;
        if let Some((h, v)) = self
            .eviction_profile
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return bad(format!(
                "eviction probability at hour {h} outside [0, 1]: {v}"
            ));
        }
        if !(self.keep_alive_s > 0.0) || !self.keep_alive_s.is_finite() {
            return bad(format!(
                "keep_alive_s must be positive, got {}",
                self.keep_alive_s
            ));
        }
        if !(self.cold_multiplier_mean >= 1.0) || !self.cold_multiplier_mean.is_finite() {
            return bad(format!(
                "cold_multiplier_mean must be >= 1, got {}",
                self.cold_multiplier_mean
            ));
        }
        if !(self.cold_multiplier_sd >= 0.0) || !self.cold_multiplier_sd.is_finite() {
            return bad(format!(
                "cold_multiplier_sd must be >= 0, got {}",
                self.cold_multiplier_sd
            ));
        }
        if !(self.noise_cv >= 0.0) || !self.noise_cv.is_finite() {
            return bad(format!("noise_cv must be >= 0, got {}", self.noise_cv));
        }
        for (mem, mix) in &self.mid_tier_mixing {
            if mix.backing_tiers.is_empty() || mix.backing_tiers.len() != mix.weights.len() {
                return bad(format!(
                    "mixing for {mem}: backing_tiers and weights must be non-empty and equally long"
                ));
            }
            if let Some(t) = mix
                .backing_tiers
                .iter()
                .find(|t| !self.tiers.contains_key(t))
            {
                return bad(format!(
                    "mixing for {mem}: backing tier {t} has no base duration"
                ));
            }
            if mix.weights.iter().any(|w| !(*w >= 0.0)) {
                return bad(format!("mixing for {mem}: weights must be non-negative"));
            }
            let total: f64 = mix.weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "mixing for {mem}: weights sum to {total}, expected 1"
                ));
            }
        }
        for s in &self.trend_steps {
            if !(s.factor > 0.0) || !s.factor.is_finite() {
                return bad(format!("trend step at {} has non-positive factor", s.time));
            }
        }
        for o in &self.outlier_events {
            if !(o.factor > 0.0) || !(o.duration_h > 0.0) {
                return bad(format!(
                    "outlier event at {} needs positive factor and duration",
                    o.time
                ));
            }
        }
        Ok(())
    }

    /// Product of all step factors with `time <= t`.
    pub fn trend_factor(&self, t: DateTime<Utc>) -> f64 {
        self.trend_steps
            .iter()
            .filter(|s| s.time <= t)
            .map(|s| s.factor)
            .product()
    }

    pub fn outlier_factor(&self, t: DateTime<Utc>) -> f64 {
        self.outlier_events
            .iter()
            .filter(|o| o.contains(t))
            .map(|o| o.factor)
            .product()
    }
}
