//! Seedable model of a FaaS platform.
//!
//! Each function copy holds at most one instance. A call reuses the instance
//! when it was last used less than `keep_alive_s` ago; second calls of a pair
//! additionally survive an eviction draw from the hour-of-week eviction
//! profile. Warm service time is the backing tier's base duration scaled by
//! the diurnal profile, trend steps, outlier windows and multiplicative noise.
//! Cold starts multiply that warm duration by a truncated normal factor.

mod profile;
mod scenario;

use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use profile::{profile_value, Interpolation, WeeklyProfile};
pub use scenario::{OutlierEvent, SimScenario, TierMixing, TrendStep};

use crate::record::{CallIndex, Status, TargetKind};
use crate::target::{
    quantize_billed, FunctionKey, InvocationOutcome, InvocationRequest, InvocationTarget,
    TargetError,
};
use crate::time::{millis_f64, parse_tz, Clock};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("memory tier {0} MB is not configured in the scenario")]
    UnknownTier(u32),
}

/// Picks the tier a new instance runs on.
pub fn assign_backing_tier(
    scenario: &SimScenario,
    memory_mb: u32,
    rng: &mut impl Rng,
) -> Result<u32, SimError> {
    if let Some(mix) = scenario.mid_tier_mixing.get(&memory_mb) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (tier, w) in mix.backing_tiers.iter().zip(&mix.weights) {
            acc += w;
            if u < acc {
                return Ok(*tier);
            }
        }
        // Rounding left a sliver above the cumulative sum.
        return Ok(*mix
            .backing_tiers
            .iter()
            .zip(&mix.weights)
            .rev()
            .find(|(_, w)| **w > 0.0)
            .map(|(t, _)| t)
            .unwrap_or(&mix.backing_tiers[0]));
    }
    if scenario.tiers.contains_key(&memory_mb) {
        Ok(memory_mb)
    } else {
        Err(SimError::UnknownTier(memory_mb))
    }
}

#[derive(Debug, Clone)]
struct Instance {
    id: String,
    backing_mb: u32,
    last_used: DateTime<Utc>,
}

#[derive(Debug)]
struct CopyState {
    rng: ChaCha8Rng,
    instance: Option<Instance>,
    instances_created: u64,
}

/// FNV-1a, used to derive stable per-copy RNG streams.
fn stream_id(key: &FunctionKey) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let text = format!("{}/{}/{}", key.name, key.memory_mb, key.copy_index);
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Simulated platform. State is partitioned per function copy, each with its
/// own RNG stream, so outcomes depend only on the per-copy call sequence.
pub struct SimTarget {
    scenario: SimScenario,
    tz: Tz,
    billing_quantum_ms: f64,
    cold_multiplier: Option<Normal<f64>>,
    noise: Option<Normal<f64>>,
    state: Mutex<BTreeMap<FunctionKey, CopyState>>,
}

impl SimTarget {
    pub fn new(scenario: SimScenario, billing_quantum_ms: f64) -> Result<Self, SimError> {
        scenario.validate()?;
        if !(billing_quantum_ms > 0.0) {
            return Err(SimError::Config(format!(
                "billing quantum must be positive, got {billing_quantum_ms}"
            )));
        }
        let tz = parse_tz(&scenario.timezone).map_err(|e| SimError::Config(e.to_string()))?;
        let cold_multiplier = (scenario.cold_multiplier_sd > 0.0).then(|| {
            Normal::new(scenario.cold_multiplier_mean, scenario.cold_multiplier_sd)
                .expect("validated")
        });
        let noise = (scenario.noise_cv > 0.0)
            .then(|| Normal::new(0.0, scenario.noise_cv).expect("validated"));
        Ok(Self {
            scenario,
            tz,
            billing_quantum_ms,
            cold_multiplier,
            noise,
            state: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn scenario(&self) -> &SimScenario {
        &self.scenario
    }

    /// Number of live instances for `key` at `t` (0 or 1).
    pub fn live_instances(&self, key: &FunctionKey, t: DateTime<Utc>) -> usize {
        let state = self.state.lock().unwrap();
        state
            .get(key)
            .and_then(|s| s.instance.as_ref())
            .filter(|i| self.is_alive(i, t))
            .map_or(0, |_| 1)
    }

    fn is_alive(&self, instance: &Instance, t: DateTime<Utc>) -> bool {
        let idle = (t - instance.last_used)
            .num_microseconds()
            .unwrap_or(i64::MAX) as f64
            / 1e6;
        idle < self.scenario.keep_alive_s
    }

    fn warm_duration(&self, backing_mb: u32, t: DateTime<Utc>, rng: &mut ChaCha8Rng) -> f64 {
        let base = self.scenario.tiers[&backing_mb];
        let scale = self.scenario.diurnal_profile.value_at(t, self.tz)
            * self.scenario.trend_factor(t)
            * self.scenario.outlier_factor(t);
        let noise = match &self.noise {
            Some(n) => loop {
                let f = 1.0 + n.sample(rng);
                if f > 0.0 {
                    break f;
                }
            },
            None => 1.0,
        };
        base * scale * noise
    }

    fn draw_cold_multiplier(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.cold_multiplier {
            Some(n) => loop {
                let m = n.sample(rng);
                if m >= 1.0 {
                    break m;
                }
            },
            None => self.scenario.cold_multiplier_mean,
        }
    }

    /// Serves one call to `key` starting at `t`.
    pub fn sim_invoke(
        &self,
        key: &FunctionKey,
        call_index: CallIndex,
        t: DateTime<Utc>,
    ) -> Result<InvocationOutcome, SimError> {
        if !self.scenario.mid_tier_mixing.contains_key(&key.memory_mb)
            && !self.scenario.tiers.contains_key(&key.memory_mb)
        {
            return Err(SimError::UnknownTier(key.memory_mb));
        }
        let mut states = self.state.lock().unwrap();
        let state = states.entry(key.clone()).or_insert_with(|| CopyState {
            rng: ChaCha8Rng::seed_from_u64(self.scenario.seed ^ stream_id(key)),
            instance: None,
            instances_created: 0,
        });

        let alive = state.instance.as_ref().is_some_and(|i| self.is_alive(i, t));
        let evicted = alive
            && call_index == CallIndex::Second
            && state.rng.gen::<f64>() < self.scenario.eviction_profile.value_at(t, self.tz);

        let (instance_id, backing, cold, duration) = if alive && !evicted {
            let inst = state.instance.as_ref().expect("alive");
            let (id, backing) = (inst.id.clone(), inst.backing_mb);
            let d = self.warm_duration(backing, t, &mut state.rng);
            (id, backing, false, d)
        } else {
            let backing = assign_backing_tier(&self.scenario, key.memory_mb, &mut state.rng)?;
            state.instances_created += 1;
            let id = format!(
                "{}-{}-c{}-i{}",
                key.name, key.memory_mb, key.copy_index, state.instances_created
            );
            let warm = self.warm_duration(backing, t, &mut state.rng);
            let d = warm * self.draw_cold_multiplier(&mut state.rng);
            (id, backing, true, d)
        };

        state.instance = Some(Instance {
            id: instance_id.clone(),
            backing_mb: backing,
            last_used: t + millis_f64(duration),
        });

        Ok(InvocationOutcome {
            instance_id,
            cold,
            handler_duration_ms: duration,
            billed_duration_ms: quantize_billed(duration, self.billing_quantum_ms)
                .expect("durations are non-negative"),
            status: Status::Ok,
            error_detail: None,
        })
    }
}

impl InvocationTarget for SimTarget {
    fn kind(&self) -> TargetKind {
        TargetKind::Sim
    }

    fn probe(&self) -> Result<(), TargetError> {
        Ok(())
    }

    fn invoke(
        &self,
        request: &InvocationRequest,
        clock: &dyn Clock,
    ) -> Result<InvocationOutcome, TargetError> {
        Ok(self.sim_invoke(&request.function_key, request.call_index, clock.now())?)
    }
}
