//! Bucketed aggregates, relative change, ECDFs and start-type rates.
//!
//! Confidence intervals use the normal approximation: `1.96 * sd / sqrt(n)`
//! for means and `1.96 * sqrt(p (1 - p) / n)` for proportions.

use std::collections::{BTreeMap, HashMap};

use chrono::{Datelike, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::record::{CallIndex, InvocationRecord, StartClass, Status};
use crate::time::{hour_of_day, hour_of_week};

pub const Z95: f64 = 1.96;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("overall mean is zero; relative change undefined")]
    ZeroMean,
    #[error("no first calls to compute an unexpected warm rate")]
    NoFirstCalls,
}

/// A usable record with its start class.
///
/// Error records and every record sharing a loop with an error are dropped
/// before classification.
#[derive(Debug, Clone, Copy)]
pub struct Classified<'a> {
    pub record: &'a InvocationRecord,
    pub class: StartClass,
    /// The pair's second call started `cooldown_s` or more after its first.
    pub degenerate: bool,
}

impl Classified<'_> {
    pub fn is_expected_warm(&self) -> bool {
        self.class == StartClass::ExpectedWarm && !self.degenerate
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusions {
    pub error_records: usize,
    /// Ok records dropped because their pair contains an error.
    pub voided_records: usize,
    pub degenerate_pairs: usize,
}

pub fn classify_records(
    records: &[InvocationRecord],
    cooldown_s: f64,
) -> (Vec<Classified<'_>>, Exclusions) {
    let mut failed_loops: HashMap<&str, ()> = HashMap::new();
    let mut first_call: HashMap<&str, &InvocationRecord> = HashMap::new();
    let mut ex = Exclusions::default();
    for r in records {
        if r.status == Status::Error {
            failed_loops.insert(&r.loop_id, ());
            ex.error_records += 1;
        } else if r.call_index == CallIndex::First {
            first_call.insert(&r.loop_id, r);
        }
    }
    let mut degenerate_loops: HashMap<&str, ()> = HashMap::new();
    for r in records {
        if r.status == Status::Ok && r.call_index == CallIndex::Second {
            if let Some(first) = first_call.get(r.loop_id.as_str()) {
                let gap = (r.timestamp_utc - first.timestamp_utc).num_milliseconds() as f64 / 1e3;
                if gap >= cooldown_s {
                    degenerate_loops.insert(&r.loop_id, ());
                }
            }
        }
    }
    ex.degenerate_pairs = degenerate_loops
        .keys()
        .filter(|l| !failed_loops.contains_key(*l))
        .count();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if r.status == Status::Error {
            continue;
        }
        if failed_loops.contains_key(r.loop_id.as_str()) {
            ex.voided_records += 1;
            continue;
        }
        out.push(Classified {
            record: r,
            class: StartClass::of(r.call_index, r.cold),
            degenerate: degenerate_loops.contains_key(r.loop_id.as_str()),
        });
    }
    (out, ex)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucketing {
    HourOfDay,
    HourOfWeek,
}

impl Bucketing {
    pub fn key(self, r: &InvocationRecord, tz: Tz) -> usize {
        match self {
            Bucketing::HourOfDay => hour_of_day(r.timestamp_utc, tz),
            Bucketing::HourOfWeek => hour_of_week(r.timestamp_utc, tz),
        }
    }
}

/// Aggregate for one hour bucket. `mean` is a duration in ms or a rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub bucket_key: usize,
    pub n: usize,
    pub mean: f64,
    pub ci95_half_width: Option<f64>,
}

impl BucketStat {
    /// CI bounds clamped to `[lo, hi]`.
    pub fn interval_within(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        self.ci95_half_width
            .map(|h| ((self.mean - h).max(lo), (self.mean + h).min(hi)))
    }
}

fn mean_stat(bucket_key: usize, values: &[f64]) -> BucketStat {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci95_half_width = (n >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z95 * var.sqrt() / (n as f64).sqrt()
    });
    BucketStat {
        bucket_key,
        n,
        mean,
        ci95_half_width,
    }
}

fn rate_stat(bucket_key: usize, hits: usize, n: usize) -> BucketStat {
    let p = hits as f64 / n as f64;
    BucketStat {
        bucket_key,
        n,
        mean: p,
        ci95_half_width: (n >= 2).then(|| Z95 * (p * (1.0 - p) / n as f64).sqrt()),
    }
}

/// Mean billed duration of expected-warm calls per bucket.
pub fn bucket_stats(records: &[Classified<'_>], bucketing: Bucketing, tz: Tz) -> Vec<BucketStat> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in records.iter().filter(|c| c.is_expected_warm()) {
        groups
            .entry(bucketing.key(c.record, tz))
            .or_default()
            .push(c.record.billed_duration_ms);
    }
    groups.into_iter().map(|(k, v)| mean_stat(k, &v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub bucket_key: usize,
    pub rel: f64,
    pub ci95_half_width: Option<f64>,
}

/// `(mean - overall) / overall` per bucket, with `overall` the n-weighted mean.
pub fn relative_change(stats: &[BucketStat]) -> Result<Vec<RelativeChange>, StatsError> {
    let total: usize = stats.iter().map(|s| s.n).sum();
    if stats.is_empty() || total == 0 {
        return Err(StatsError::Empty);
    }
    let overall = stats.iter().map(|s| s.n as f64 * s.mean).sum::<f64>() / total as f64;
    if overall == 0.0 {
        return Err(StatsError::ZeroMean);
    }
    if !overall.is_finite() {
        return Err(StatsError::NonFinite);
    }
    Ok(stats
        .iter()
        .map(|s| RelativeChange {
            bucket_key: s.bucket_key,
            rel: (s.mean - overall) / overall,
            ci95_half_width: s.ci95_half_width.map(|h| h / overall.abs()),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcdfPoint {
    pub x: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

/// Empirical CDF at each distinct value.
pub fn ecdf(values: &[f64]) -> Result<Vec<EcdfPoint>, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<EcdfPoint> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.x == x => last.f = f,
            _ => out.push(EcdfPoint { x, f }),
        }
    }
    Ok(out)
}

/// `UnexpectedCold / (UnexpectedCold + ExpectedWarm)` per bucket over
/// non-degenerate second calls. Buckets without second calls are omitted.
pub fn unexpected_cold_rates(
    records: &[Classified<'_>],
    bucketing: Bucketing,
    tz: Tz,
) -> Vec<BucketStat> {
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for c in second_calls(records) {
        let e = groups.entry(bucketing.key(c.record, tz)).or_default();
        e.1 += 1;
        if c.class == StartClass::UnexpectedCold {
            e.0 += 1;
        }
    }
    groups
        .into_iter()
        .map(|(k, (hits, n))| rate_stat(k, hits, n))
        .collect()
}

fn second_calls<'a, 'b>(
    records: &'b [Classified<'a>],
) -> impl Iterator<Item = &'b Classified<'a>> + 'b {
    records
        .iter()
        .filter(|c| c.record.call_index == CallIndex::Second && !c.degenerate)
}

/// `UnexpectedWarm / (UnexpectedWarm + ExpectedCold)` over first calls.
pub fn unexpected_warm_rate(records: &[Classified<'_>]) -> Result<f64, StatsError> {
    let (mut warm, mut n) = (0usize, 0usize);
    for c in records
        .iter()
        .filter(|c| c.record.call_index == CallIndex::First)
    {
        n += 1;
        if c.class == StartClass::UnexpectedWarm {
            warm += 1;
        }
    }
    if n == 0 {
        return Err(StatsError::NoFirstCalls);
    }
    Ok(warm as f64 / n as f64)
}

/// Half-open local hour range `[start, end)`; wraps past midnight when
/// `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: u32,
    pub end: u32,
}

impl HourRange {
    pub fn contains(self, hour: u32) -> bool {
        if self.start <= self.end {
            hour >= self.start && hour < self.end
        } else {
            hour >= self.start || hour < self.end
        }
    }
}

/// Local-time windows for period summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeriodWindows {
    /// Applies to every day of the week.
    pub night: HourRange,
    /// Applies Monday to Friday.
    pub working_hours: HourRange,
}

impl Default for PeriodWindows {
    fn default() -> Self {
        Self {
            night: HourRange { start: 20, end: 8 },
            working_hours: HourRange { start: 9, end: 17 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Night,
    Weekend,
    WorkingHours,
    MondayWorkingHours,
}

impl Period {
    pub const ALL: [Period; 4] = [
        Period::Night,
        Period::Weekend,
        Period::WorkingHours,
        Period::MondayWorkingHours,
    ];
}

impl PeriodWindows {
    pub fn contains(&self, period: Period, r: &InvocationRecord, tz: Tz) -> bool {
        use chrono::Timelike;
        let local = r.timestamp_utc.with_timezone(&tz);
        let hour = local.hour();
        let day = local.weekday();
        let weekend = matches!(day, Weekday::Sat | Weekday::Sun);
        match period {
            Period::Night => self.night.contains(hour),
            Period::Weekend => weekend,
            Period::WorkingHours => !weekend && self.working_hours.contains(hour),
            Period::MondayWorkingHours => day == Weekday::Mon && self.working_hours.contains(hour),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRate {
    pub period: Period,
    pub n: usize,
    pub rate: f64,
    pub ci95_half_width: Option<f64>,
}

/// Pooled unexpected-cold rate per period; periods without second calls are omitted.
pub fn period_rates(
    records: &[Classified<'_>],
    tz: Tz,
    windows: &PeriodWindows,
) -> Vec<PeriodRate> {
    Period::ALL
        .iter()
        .filter_map(|&period| {
            let (mut hits, mut n) = (0, 0);
            for c in second_calls(records).filter(|c| windows.contains(period, c.record, tz)) {
                n += 1;
                if c.class == StartClass::UnexpectedCold {
                    hits += 1;
                }
            }
            (n > 0).then(|| {
                let s = rate_stat(0, hits, n);
                PeriodRate {
                    period,
                    n,
                    rate: s.mean,
                    ci95_half_width: s.ci95_half_width,
                }
            })
        })
        .collect()
}

/// n-weighted mean of the buckets whose key falls in `hours`.
pub fn window_mean(stats: &[BucketStat], hours: HourRange) -> Option<f64> {
    let (sum, n) = stats
        .iter()
        .filter(|s| hours.contains(s.bucket_key as u32 % 24))
        .fold((0.0, 0usize), |(sum, n), s| {
            (sum + s.mean * s.n as f64, n + s.n)
        });
    (n > 0).then(|| sum / n as f64)
}

pub fn class_counts(records: &[Classified<'_>]) -> BTreeMap<StartClass, usize> {
    let mut counts: BTreeMap<StartClass, usize> = StartClass::ALL.iter().map(|c| (*c, 0)).collect();
    // A degenerate pair still has a valid first call; only its second call
    // lacks a warm expectation.
    for c in records
        .iter()
        .filter(|c| !(c.degenerate && c.record.call_index == CallIndex::Second))
    {
        *counts.get_mut(&c.class).expect("all classes present") += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{TargetKind, Workload};
    use chrono::{DateTime, Duration, Utc};

    fn rec(
        ts: DateTime<Utc>,
        loop_id: &str,
        call: CallIndex,
        cold: bool,
        ms: f64,
    ) -> InvocationRecord {
        InvocationRecord {
            timestamp_utc: ts,
            function_name: "float".into(),
            workload: Workload::Float,
            memory_mb: 128,
            copy_index: 0,
            loop_id: loop_id.into(),
            call_index: call,
            instance_id: "i".into(),
            cold,
            billed_duration_ms: ms,
            handler_duration_ms: ms,
            target_kind: TargetKind::Sim,
            status: Status::Ok,
        }
    }

    fn utc(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn tz() -> Tz {
        "UTC".parse().unwrap()
    }

    #[test]
    fn two_values_in_one_bucket() {
        let rs = vec![
            rec(
                utc("2023-01-10T03:10:00Z"),
                "a",
                CallIndex::Second,
                false,
                100.0,
            ),
            rec(
                utc("2023-01-10T03:50:00Z"),
                "b",
                CallIndex::Second,
                false,
                120.0,
            ),
        ];
        let (c, _) = classify_records(&rs, 1200.0);
        let s = bucket_stats(&c, Bucketing::HourOfDay, tz());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].bucket_key, 3);
        assert_eq!(s[0].mean, 110.0);
        let sd = 200f64.sqrt();
        let expected = 1.96 * sd / 2f64.sqrt();
        assert!((s[0].ci95_half_width.unwrap() - expected).abs() < 1e-12);
        assert!((expected - 19.6).abs() < 1e-9);
    }

    #[test]
    fn single_value_has_no_ci() {
        let rs = vec![rec(
            utc("2023-01-10T05:00:00Z"),
            "a",
            CallIndex::Second,
            false,
            90.0,
        )];
        let (c, _) = classify_records(&rs, 1200.0);
        let s = bucket_stats(&c, Bucketing::HourOfDay, tz());
        assert_eq!(s[0].mean, 90.0);
        assert_eq!(s[0].ci95_half_width, None);
        assert!(bucket_stats(&[], Bucketing::HourOfWeek, tz()).is_empty());
    }

    #[test]
    fn relative_change_examples() {
        let st = |k, n, mean| BucketStat {
            bucket_key: k,
            n,
            mean,
            ci95_half_width: None,
        };
        let r = relative_change(&[st(0, 5, 7.0), st(1, 9, 7.0)]).unwrap();
        assert!(r.iter().all(|x| x.rel == 0.0));
        let r = relative_change(&[st(0, 10, 106.0), st(1, 10, 122.0)]).unwrap();
        assert!((r[0].rel + 8.0 / 114.0).abs() < 1e-12);
        assert!((r[1].rel - 8.0 / 114.0).abs() < 1e-12);
        assert!((r[1].rel - 0.070).abs() < 0.001);
        assert_eq!(relative_change(&[st(0, 3, 0.0)]), Err(StatsError::ZeroMean));
        assert_eq!(relative_change(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn ecdf_examples() {
        assert_eq!(ecdf(&[5.0]).unwrap(), vec![EcdfPoint { x: 5.0, f: 1.0 }]);
        assert_eq!(
            ecdf(&[1.0, 2.0, 2.0, 4.0]).unwrap(),
            vec![
                EcdfPoint { x: 1.0, f: 0.25 },
                EcdfPoint { x: 2.0, f: 0.75 },
                EcdfPoint { x: 4.0, f: 1.0 }
            ]
        );
        assert_eq!(ecdf(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn rates() {
        let mut rs = Vec::new();
        let t = utc("2023-01-10T04:00:00Z");
        for i in 0..100 {
            let id = format!("l{i}");
            rs.push(rec(t, &id, CallIndex::First, true, 900.0));
            rs.push(rec(
                t + Duration::seconds(1),
                &id,
                CallIndex::Second,
                i < 3,
                100.0,
            ));
        }
        let (c, _) = classify_records(&rs, 1200.0);
        let r = unexpected_cold_rates(&c, Bucketing::HourOfDay, tz());
        assert_eq!(r.len(), 1);
        assert!((r[0].mean - 0.03).abs() < 1e-12);
        assert_eq!(r[0].n, 100);
        assert_eq!(unexpected_warm_rate(&c).unwrap(), 0.0);
    }

    #[test]
    fn unexpected_warm_rate_counts_first_calls() {
        let t = utc("2023-01-10T04:00:00Z");
        let rs: Vec<_> = (0..1000)
            .map(|i| rec(t, &format!("l{i}"), CallIndex::First, i != 0, 900.0))
            .collect();
        let (c, _) = classify_records(&rs, 1200.0);
        assert!((unexpected_warm_rate(&c).unwrap() - 0.001).abs() < 1e-15);
        assert_eq!(unexpected_warm_rate(&[]), Err(StatsError::NoFirstCalls));
    }

    #[test]
    fn errors_void_their_pair_and_gaps_mark_degenerate() {
        let t = utc("2023-01-10T04:00:00Z");
        let mut failed = rec(t + Duration::seconds(1), "a", CallIndex::Second, false, 0.0);
        failed.status = Status::Error;
        let rs = vec![
            rec(t, "a", CallIndex::First, true, 900.0),
            failed,
            rec(t, "b", CallIndex::First, true, 900.0),
            rec(
                t + Duration::seconds(1300),
                "b",
                CallIndex::Second,
                true,
                900.0,
            ),
        ];
        let (c, ex) = classify_records(&rs, 1200.0);
        assert_eq!(ex.error_records, 1);
        assert_eq!(ex.voided_records, 1);
        assert_eq!(ex.degenerate_pairs, 1);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.degenerate));
        assert!(unexpected_cold_rates(&c, Bucketing::HourOfDay, tz()).is_empty());
    }

    #[test]
    fn hour_ranges() {
        let night = HourRange { start: 20, end: 8 };
        assert!(night.contains(23) && night.contains(0) && night.contains(7));
        assert!(!night.contains(8) && !night.contains(19));
        let work = HourRange { start: 9, end: 17 };
        assert!(work.contains(9) && work.contains(16) && !work.contains(17));
    }
}
