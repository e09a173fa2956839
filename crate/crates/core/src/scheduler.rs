//! Campaign planning and execution.
//!
//! In pair-loop mode every function variant is deployed as
//! `ceil(cooldown / interval)` copies. Copy `k` starts its first loop at
//! `k * interval`; each loop calls the copy twice back to back and the copy
//! then rests for a full cycle of `copies * interval >= cooldown` seconds, so
//! the variant as a whole starts one pair every interval.
//!
//! Burst mode issues `burst_size` strictly sequential calls on copy 0 every
//! `burst_period_s`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::record::{
    storage_time, CallIndex, InvocationRecord, RecordError, RecordSink, Status, Workload,
};
use crate::target::{FunctionKey, InvocationOutcome, InvocationRequest, InvocationTarget};
use crate::time::{millis_f64, parse_tz, seconds_f64, Clock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    PairLoop,
    Burst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub function_name: String,
    pub workload: Workload,
    pub memory_mb: u32,
    /// HTTP endpoint template; `{copy}` expands to the copy index.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Simulator key; defaults to `function_name`.
    #[serde(default)]
    pub sim_key: Option<String>,
}

impl FunctionSpec {
    pub fn key_name(&self) -> &str {
        self.sim_key.as_deref().unwrap_or(&self.function_name)
    }
}

fn default_run_id() -> String {
    "campaign".into()
}
fn default_interval() -> f64 {
    40.0
}
fn default_cooldown() -> f64 {
    1200.0
}
fn default_burst_size() -> u32 {
    50
}
fn default_burst_period() -> f64 {
    3600.0
}
fn default_tz() -> String {
    "CET".into()
}
fn default_quantum() -> f64 {
    1.0
}
fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    pub functions: Vec<FunctionSpec>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_interval")]
    pub measurement_interval_s: f64,
    #[serde(default = "default_cooldown")]
    pub cooldown_s: f64,
    #[serde(default = "default_burst_size")]
    pub burst_size: u32,
    #[serde(default = "default_burst_period")]
    pub burst_period_s: f64,
    pub duration_s: f64,
    #[serde(default = "default_tz")]
    pub timezone: String,
    #[serde(default = "default_quantum")]
    pub billing_quantum_ms: f64,
    /// Campaign start; defaults to the clock's current time.
    #[serde(default)]
    pub start: Option<DateTime<Utc>>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub bearer_token: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid campaign config: {0}")]
    Invalid(String),
}

impl CampaignConfig {
    pub fn new(functions: Vec<FunctionSpec>, duration_s: f64) -> Self {
        Self {
            run_id: default_run_id(),
            functions,
            mode: Mode::PairLoop,
            measurement_interval_s: default_interval(),
            cooldown_s: default_cooldown(),
            burst_size: default_burst_size(),
            burst_period_s: default_burst_period(),
            duration_s,
            timezone: default_tz(),
            billing_quantum_ms: default_quantum(),
            start: None,
            timeout_s: default_timeout(),
            bearer_token: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: CampaignConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = |name: &str, v: f64| -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        if self.functions.is_empty() {
            return bad("at least one function is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.functions {
            if f.memory_mb == 0 || !f.memory_mb.is_multiple_of(128) {
                return bad(format!(
                    "{}: memory_mb must be a positive multiple of 128, got {}",
                    f.function_name, f.memory_mb
                ));
            }
            if !seen.insert((f.function_name.clone(), f.memory_mb)) {
                return bad(format!(
                    "duplicate function {} with {} MB",
                    f.function_name, f.memory_mb
                ));
            }
        }
        positive("measurement_interval_s", self.measurement_interval_s)?;
        positive("cooldown_s", self.cooldown_s)?;
        positive("burst_period_s", self.burst_period_s)?;
        positive("duration_s", self.duration_s)?;
        positive("billing_quantum_ms", self.billing_quantum_ms)?;
        positive("timeout_s", self.timeout_s)?;
        if self.burst_size == 0 {
            return bad("burst_size must be at least 1".into());
        }
        if self.mode == Mode::PairLoop && self.cooldown_s < self.measurement_interval_s {
            return bad(format!(
                "cooldown_s ({}) must be >= measurement_interval_s ({}) in pair_loop mode",
                self.cooldown_s, self.measurement_interval_s
            ));
        }
        parse_tz(&self.timezone).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Parallel copies per function variant.
    pub fn copies_needed(&self) -> u32 {
        let ratio = self.cooldown_s / self.measurement_interval_s;
        ((ratio - 1e-9).ceil() as u32).max(1)
    }

    /// Endpoint or sim keys are per copy, so the function key carries the copy.
    pub fn function_key(&self, function: &FunctionSpec, copy_index: u32) -> FunctionKey {
        FunctionKey::new(function.key_name(), function.memory_mb, copy_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedCall {
    /// Earliest start; a call also waits for the previous call on its copy.
    pub virtual_time: DateTime<Utc>,
    pub function_name: String,
    pub workload: Workload,
    pub memory_mb: u32,
    pub copy_index: u32,
    pub loop_id: String,
    pub call_index: CallIndex,
    /// Position of the function in the config.
    pub function: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("campaign duration {duration_s}s is shorter than one loop ({loop_s}s)")]
    Empty { duration_s: f64, loop_s: f64 },
    #[error("plan requires mode {expected:?}")]
    WrongMode { expected: Mode },
}

fn sort_plan(plan: &mut [PlannedCall]) {
    plan.sort_by(|a, b| {
        a.virtual_time
            .cmp(&b.virtual_time)
            .then(a.function.cmp(&b.function))
            .then(a.copy_index.cmp(&b.copy_index))
            .then(a.loop_id.cmp(&b.loop_id))
            .then(a.call_index.cmp(&b.call_index))
    });
}

/// Plans a pair-loop campaign starting at `start`.
pub fn plan_campaign(
    config: &CampaignConfig,
    start: DateTime<Utc>,
) -> Result<Vec<PlannedCall>, PlanError> {
    config.validate()?;
    if config.mode != Mode::PairLoop {
        return Err(PlanError::WrongMode {
            expected: Mode::PairLoop,
        });
    }
    let interval = config.measurement_interval_s;
    if config.duration_s < interval {
        return Err(PlanError::Empty {
            duration_s: config.duration_s,
            loop_s: interval,
        });
    }
    let copies = config.copies_needed();
    let cycle = copies as f64 * interval;
    let mut plan = Vec::new();
    for (fi, f) in config.functions.iter().enumerate() {
        for copy in 0..copies {
            let mut j = 0u64;
            loop {
                let offset = copy as f64 * interval + j as f64 * cycle;
                if offset >= config.duration_s {
                    break;
                }
                let t = start + seconds_f64(offset);
                let loop_id = format!("{}-{}/c{}/l{}", f.function_name, f.memory_mb, copy, j);
                for call_index in [CallIndex::First, CallIndex::Second] {
                    plan.push(PlannedCall {
                        virtual_time: t,
                        function_name: f.function_name.clone(),
                        workload: f.workload,
                        memory_mb: f.memory_mb,
                        copy_index: copy,
                        loop_id: loop_id.clone(),
                        call_index,
                        function: fi,
                    });
                }
                j += 1;
            }
        }
    }
    sort_plan(&mut plan);
    Ok(plan)
}

/// Plans a burst campaign starting at `start`. The head of each burst is a
/// first call; every later call in the burst is a second call with its own
/// loop id.
pub fn plan_burst(
    config: &CampaignConfig,
    start: DateTime<Utc>,
) -> Result<Vec<PlannedCall>, PlanError> {
    config.validate()?;
    if config.mode != Mode::Burst {
        return Err(PlanError::WrongMode {
            expected: Mode::Burst,
        });
    }
    if config.duration_s < config.burst_period_s {
        return Err(PlanError::Empty {
            duration_s: config.duration_s,
            loop_s: config.burst_period_s,
        });
    }
    let mut plan = Vec::new();
    for (fi, f) in config.functions.iter().enumerate() {
        let mut b = 0u64;
        loop {
            let offset = b as f64 * config.burst_period_s;
            if offset >= config.duration_s {
                break;
            }
            let t = start + seconds_f64(offset);
            for k in 0..config.burst_size {
                plan.push(PlannedCall {
                    virtual_time: t,
                    function_name: f.function_name.clone(),
                    workload: f.workload,
                    memory_mb: f.memory_mb,
                    copy_index: 0,
                    loop_id: format!("{}-{}/b{}/k{}", f.function_name, f.memory_mb, b, k),
                    call_index: if k == 0 {
                        CallIndex::First
                    } else {
                        CallIndex::Second
                    },
                    function: fi,
                });
            }
            b += 1;
        }
    }
    // Keep burst order: sort is stable and calls of one burst share a time,
    // so order them explicitly by their position.
    plan.sort_by(|a, b| {
        a.virtual_time
            .cmp(&b.virtual_time)
            .then(a.function.cmp(&b.function))
            .then(burst_position(&a.loop_id).cmp(&burst_position(&b.loop_id)))
    });
    Ok(plan)
}

fn burst_position(loop_id: &str) -> u64 {
    loop_id
        .rsplit_once("/k")
        .and_then(|(_, k)| k.parse().ok())
        .unwrap_or(0)
}

pub fn plan(config: &CampaignConfig, start: DateTime<Utc>) -> Result<Vec<PlannedCall>, PlanError> {
    match config.mode {
        Mode::PairLoop => plan_campaign(config, start),
        Mode::Burst => plan_burst(config, start),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignSummary {
    /// Calls that completed with status ok.
    pub calls_made: usize,
    pub errors: usize,
    pub wall_time: StdDuration,
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("target probe failed: {0}")]
    Probe(crate::target::TargetError),
    #[error(transparent)]
    Sink(#[from] RecordError),
}

/// Calls on one function copy, executed strictly in order.
struct Lane<'a> {
    calls: Vec<&'a PlannedCall>,
    next: usize,
    ready_at: DateTime<Utc>,
}

struct Counters {
    ok: AtomicUsize,
    errors: AtomicUsize,
}

fn to_record(
    call: &PlannedCall,
    started: DateTime<Utc>,
    outcome: &InvocationOutcome,
    kind: crate::record::TargetKind,
) -> InvocationRecord {
    InvocationRecord {
        timestamp_utc: storage_time(started),
        function_name: call.function_name.clone(),
        workload: call.workload,
        memory_mb: call.memory_mb,
        copy_index: call.copy_index,
        loop_id: call.loop_id.clone(),
        call_index: call.call_index,
        instance_id: outcome.instance_id.clone(),
        cold: outcome.cold,
        billed_duration_ms: outcome.billed_duration_ms,
        handler_duration_ms: outcome.handler_duration_ms,
        target_kind: kind,
        status: outcome.status,
    }
}

fn execute_call<W: Write + Send>(
    config: &CampaignConfig,
    call: &PlannedCall,
    target: &dyn InvocationTarget,
    clock: &dyn Clock,
    sink: &RecordSink<W>,
    counters: &Counters,
) -> Result<DateTime<Utc>, RecordError> {
    let started = clock.now();
    let f = &config.functions[call.function];
    let request = InvocationRequest {
        function_key: config.function_key(f, call.copy_index),
        loop_id: call.loop_id.clone(),
        call_index: call.call_index,
    };
    let outcome = target.invoke(&request, clock).unwrap_or_else(|e| {
        log::warn!("{} call {:?}: {e}", call.loop_id, call.call_index);
        InvocationOutcome::failed(e.to_string())
    });
    if outcome.status == Status::Ok {
        counters.ok.fetch_add(1, Ordering::Relaxed);
    } else {
        counters.errors.fetch_add(1, Ordering::Relaxed);
        log::debug!(
            "{} call {:?} failed: {}",
            call.loop_id,
            call.call_index,
            outcome.error_detail.as_deref().unwrap_or("unknown")
        );
    }
    sink.append(&[to_record(call, started, &outcome, target.kind())])?;
    let finished = if clock.is_virtual() {
        started + millis_f64(outcome.handler_duration_ms)
    } else {
        clock.now()
    };
    Ok(finished)
}

fn lanes<'a>(plan: &'a [PlannedCall], start: DateTime<Utc>) -> Vec<Lane<'a>> {
    let mut by_copy: BTreeMap<(usize, u32), Vec<&PlannedCall>> = BTreeMap::new();
    for call in plan {
        by_copy
            .entry((call.function, call.copy_index))
            .or_default()
            .push(call);
    }
    by_copy
        .into_values()
        .map(|calls| Lane {
            calls,
            next: 0,
            ready_at: start,
        })
        .collect()
}

/// Runs `config` against `target`, appending one record per call to `sink`.
///
/// With a virtual clock the copies are interleaved by a single-threaded
/// event loop, which makes the output a pure function of config, target
/// state and start time. With a real clock each copy runs on its own thread.
pub fn run_campaign<W: Write + Send>(
    config: &CampaignConfig,
    target: &dyn InvocationTarget,
    clock: &dyn Clock,
    sink: &RecordSink<W>,
) -> Result<CampaignSummary, CampaignError> {
    let wall = Instant::now();
    let start = config.start.unwrap_or_else(|| clock.now());
    let planned = plan(config, start)?;
    target.probe().map_err(CampaignError::Probe)?;
    let counters = Counters {
        ok: AtomicUsize::new(0),
        errors: AtomicUsize::new(0),
    };
    let mut lanes = lanes(&planned, start);
    log::info!(
        "campaign {}: {} planned calls on {} copies",
        config.run_id,
        planned.len(),
        lanes.len()
    );

    if clock.is_virtual() {
        run_event_loop(config, &mut lanes, target, clock, sink, &counters)?;
    } else {
        run_threads(config, lanes, target, clock, sink, &counters)?;
    }

    Ok(CampaignSummary {
        calls_made: counters.ok.into_inner(),
        errors: counters.errors.into_inner(),
        wall_time: wall.elapsed(),
    })
}

fn run_event_loop<W: Write + Send>(
    config: &CampaignConfig,
    lanes: &mut [Lane<'_>],
    target: &dyn InvocationTarget,
    clock: &dyn Clock,
    sink: &RecordSink<W>,
    counters: &Counters,
) -> Result<(), CampaignError> {
    let due = |lane: &Lane<'_>| lane.calls[lane.next].virtual_time.max(lane.ready_at);
    let mut queue: BinaryHeap<Reverse<(DateTime<Utc>, usize)>> = lanes
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.calls.is_empty())
        .map(|(i, l)| Reverse((due(l), i)))
        .collect();
    let mut done = 0usize;
    while let Some(Reverse((t, i))) = queue.pop() {
        clock.sleep_until(t);
        let lane = &mut lanes[i];
        let call = lane.calls[lane.next];
        lane.ready_at = execute_call(config, call, target, clock, sink, counters)?;
        lane.next += 1;
        if lane.next < lane.calls.len() {
            queue.push(Reverse((due(lane), i)));
        }
        done += 1;
        if done % 50_000 == 0 {
            log::info!(
                "{done} calls simulated ({} errors), virtual time {}",
                counters.errors.load(Ordering::Relaxed),
                t
            );
        }
    }
    Ok(())
}

fn run_threads<W: Write + Send>(
    config: &CampaignConfig,
    lanes: Vec<Lane<'_>>,
    target: &dyn InvocationTarget,
    clock: &dyn Clock,
    sink: &RecordSink<W>,
    counters: &Counters,
) -> Result<(), CampaignError> {
    let progress_every = StdDuration::from_secs(30);
    std::thread::scope(|scope| {
        let handles: Vec<_> = lanes
            .into_iter()
            .map(|lane| {
                scope.spawn(move || -> Result<(), RecordError> {
                    let mut ready = lane.ready_at;
                    for call in &lane.calls {
                        clock.sleep_until(call.virtual_time.max(ready));
                        ready = execute_call(config, call, target, clock, sink, counters)?;
                    }
                    Ok(())
                })
            })
            .collect();
        let mut last = Instant::now();
        while handles.iter().any(|h| !h.is_finished()) {
            std::thread::sleep(StdDuration::from_millis(50));
            if last.elapsed() >= progress_every {
                log::info!(
                    "{} calls completed, {} errors",
                    counters.ok.load(Ordering::Relaxed),
                    counters.errors.load(Ordering::Relaxed)
                );
                last = Instant::now();
            }
        }
        for h in handles {
            h.join().expect("lane thread panicked")?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn float128() -> FunctionSpec {
        FunctionSpec {
            function_name: "float".into(),
            workload: Workload::Float,
            memory_mb: 128,
            endpoint: None,
            sim_key: None,
        }
    }

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2022-12-12T00:00:00+01:00")
            .unwrap()
            .with_timezone(&Utc)
    }

    #[test]
    fn thirty_copies() {
        let c = CampaignConfig::new(vec![float128()], 3600.0);
        assert_eq!(c.copies_needed(), 30);
        let mut c2 = c.clone();
        c2.measurement_interval_s = 600.0;
        c2.cooldown_s = 600.0;
        assert_eq!(c2.copies_needed(), 1);
        c2.cooldown_s = 601.0;
        assert_eq!(c2.copies_needed(), 2);
    }

    #[test]
    fn one_hour_plan_has_ninety_pairs() {
        let c = CampaignConfig::new(vec![float128()], 3600.0);
        let plan = plan_campaign(&c, t0()).unwrap();
        assert_eq!(plan.len(), 180);
        let starts: Vec<_> = plan
            .iter()
            .filter(|p| p.call_index == CallIndex::First)
            .map(|p| (p.virtual_time - t0()).num_seconds())
            .collect();
        assert_eq!(starts, (0..90).map(|i| i * 40).collect::<Vec<_>>());
    }

    #[test]
    fn single_copy_plan() {
        let mut c = CampaignConfig::new(vec![float128()], 3000.0);
        c.measurement_interval_s = 600.0;
        c.cooldown_s = 600.0;
        let plan = plan_campaign(&c, t0()).unwrap();
        assert_eq!(plan.len(), 10);
        assert!(plan.iter().all(|p| p.copy_index == 0));
    }

    #[test]
    fn plan_invariants() {
        let mut c = CampaignConfig::new(vec![float128()], 6.0 * 3600.0);
        c.measurement_interval_s = 70.0;
        c.cooldown_s = 1000.0;
        let plan = plan_campaign(&c, t0()).unwrap();
        let mut ids = HashSet::new();
        for p in &plan {
            assert!(ids.insert((p.loop_id.clone(), p.call_index)));
        }
        let mut per_copy: BTreeMap<u32, Vec<DateTime<Utc>>> = BTreeMap::new();
        for p in plan.iter().filter(|p| p.call_index == CallIndex::First) {
            per_copy
                .entry(p.copy_index)
                .or_default()
                .push(p.virtual_time);
        }
        for starts in per_copy.values() {
            for w in starts.windows(2) {
                assert!((w[1] - w[0]).num_seconds() as f64 >= c.cooldown_s);
            }
        }
        // Within a loop the first call precedes the second.
        for (i, p) in plan.iter().enumerate() {
            if p.call_index == CallIndex::Second {
                let first = plan.iter().position(|q| q.loop_id == p.loop_id).unwrap();
                assert!(first < i);
            }
        }
    }

    #[test]
    fn cooldown_below_interval_rejected() {
        let mut c = CampaignConfig::new(vec![float128()], 3600.0);
        c.cooldown_s = 10.0;
        assert!(matches!(plan_campaign(&c, t0()), Err(PlanError::Config(_))));
    }

    #[test]
    fn too_short_duration() {
        let c = CampaignConfig::new(vec![float128()], 30.0);
        assert!(matches!(
            plan_campaign(&c, t0()),
            Err(PlanError::Empty { .. })
        ));
    }

    #[test]
    fn burst_counts() {
        let mut c = CampaignConfig::new(vec![float128()], 5.0 * 86400.0);
        c.mode = Mode::Burst;
        let plan = plan_burst(&c, t0()).unwrap();
        assert_eq!(plan.len(), 6000);
        assert_eq!(
            plan.iter()
                .filter(|p| p.call_index == CallIndex::First)
                .count(),
            120
        );

        c.duration_s = 7200.0;
        c.burst_size = 3;
        let plan = plan_burst(&c, t0()).unwrap();
        assert_eq!(plan.len(), 6);
        let ids: Vec<_> = plan.iter().map(|p| p.loop_id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "float-128/b0/k0",
                "float-128/b0/k1",
                "float-128/b0/k2",
                "float-128/b1/k0",
                "float-128/b1/k1",
                "float-128/b1/k2"
            ]
        );

        c.burst_size = 1;
        let plan = plan_burst(&c, t0()).unwrap();
        assert!(plan.iter().all(|p| p.call_index == CallIndex::First));
        assert_eq!(plan.len(), 2);
    }

    #[test]
    fn burst_positions_sort_numerically() {
        let mut c = CampaignConfig::new(vec![float128()], 3600.0);
        c.mode = Mode::Burst;
        c.burst_size = 12;
        let plan = plan_burst(&c, t0()).unwrap();
        let ks: Vec<u64> = plan.iter().map(|p| burst_position(&p.loop_id)).collect();
        assert_eq!(ks, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn mode_mismatch() {
        let c = CampaignConfig::new(vec![float128()], 3600.0);
        assert!(matches!(
            plan_burst(&c, t0()),
            Err(PlanError::WrongMode { .. })
        ));
    }
}
