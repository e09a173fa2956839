#![allow(dead_code)]

use chrono::{DateTime, Duration, Utc};
use variability::record::{CallIndex, InvocationRecord, Status, TargetKind, Workload};
use variability::scheduler::{CampaignConfig, FunctionSpec};

pub fn utc(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
}

pub fn function(name: &str, workload: Workload, memory_mb: u32) -> FunctionSpec {
    FunctionSpec {
        function_name: name.into(),
        workload,
        memory_mb,
        endpoint: None,
        sim_key: None,
    }
}

/// Float and matrix at 128, 256 and 512 MB.
pub fn standard_functions() -> Vec<FunctionSpec> {
    let mut out = Vec::new();
    for (name, w) in [("float", Workload::Float), ("matrix", Workload::Matrix)] {
        for mem in [128, 256, 512] {
            out.push(function(name, w, mem));
        }
    }
    out
}

pub fn sim_config(functions: Vec<FunctionSpec>, days: f64) -> CampaignConfig {
    let mut c = CampaignConfig::new(functions, days * 86_400.0);
    c.start = Some(variability::cli::default_sim_start());
    c
}

pub fn record(
    t: DateTime<Utc>,
    loop_id: &str,
    call_index: CallIndex,
    cold: bool,
    billed: f64,
) -> InvocationRecord {
    InvocationRecord {
        timestamp_utc: t,
        function_name: "float".into(),
        workload: Workload::Float,
        memory_mb: 128,
        copy_index: 0,
        loop_id: loop_id.into(),
        call_index,
        instance_id: format!("inst-{loop_id}"),
        cold,
        billed_duration_ms: billed,
        handler_duration_ms: billed,
        target_kind: TargetKind::Sim,
        status: Status::Ok,
    }
}

/// Warm pairs every 40 s for `hours`, with hourly-constant durations from `ms`.
pub fn warm_pairs(
    start: DateTime<Utc>,
    hours: i64,
    ms: impl Fn(i64) -> f64,
) -> Vec<InvocationRecord> {
    let mut out = Vec::new();
    let mut k = 0;
    for h in 0..hours {
        for j in 0..90 {
            let t = start + Duration::hours(h) + Duration::seconds(40 * j);
            let id = format!("l{k}");
            out.push(record(t, &id, CallIndex::First, true, ms(h) * 9.5));
            out.push(record(
                t + Duration::seconds(2),
                &id,
                CallIndex::Second,
                false,
                ms(h),
            ));
            k += 1;
        }
    }
    out
}
