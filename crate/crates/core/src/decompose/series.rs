use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::stats::Classified;
use crate::time::floor_to_local_hour;

/// Regular series; `filled[i]` marks values interpolated across a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub start: DateTime<Utc>,
    pub step_s: f64,
    pub values: Vec<f64>,
    pub filled: Vec<bool>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::milliseconds((self.step_s * 1000.0 * i as f64).round() as i64)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SeriesError {
    #[error("need at least {needed_h} hours of expected-warm data, got {got_h}")]
    InsufficientData { needed_h: usize, got_h: usize },
    #[error("gap of {hours} hours from {from} to {until} exceeds the fillable maximum of {max_h}")]
    UnfillableGap {
        from: DateTime<Utc>,
        until: DateTime<Utc>,
        hours: usize,
        max_h: usize,
    },
}

pub const MIN_SERIES_HOURS: usize = 48;

/// Hourly mean billed duration of expected-warm calls, hours aligned to
/// local time in `tz`. Gaps of up to `max_gap_h` hours are filled linearly.
pub fn hourly_series(
    records: &[Classified<'_>],
    tz: Tz,
    max_gap_h: usize,
) -> Result<TimeSeries, SeriesError> {
    let mut hours: BTreeMap<DateTime<Utc>, (f64, usize)> = BTreeMap::new();
    for c in records.iter().filter(|c| c.is_expected_warm()) {
        let e = hours
            .entry(floor_to_local_hour(c.record.timestamp_utc, tz))
            .or_default();
        e.0 += c.record.billed_duration_ms;
        e.1 += 1;
    }
    let (Some((&first, _)), Some((&last, _))) = (hours.first_key_value(), hours.last_key_value())
    else {
        return Err(SeriesError::InsufficientData {
            needed_h: MIN_SERIES_HOURS,
            got_h: 0,
        });
    };
    let span_h = ((last - first).num_seconds() / 3600) as usize + 1;
    if span_h < MIN_SERIES_HOURS {
        return Err(SeriesError::InsufficientData {
            needed_h: MIN_SERIES_HOURS,
            got_h: span_h,
        });
    }
    let mut values: Vec<Option<f64>> = vec![None; span_h];
    for (t, (sum, n)) in &hours {
        let i = ((*t - first).num_seconds() / 3600) as usize;
        values[i] = Some(sum / *n as f64);
    }
    let mut out = Vec::with_capacity(span_h);
    let mut filled = Vec::with_capacity(span_h);
    let mut i = 0;
    while i < span_h {
        if let Some(v) = values[i] {
            out.push(v);
            filled.push(false);
            i += 1;
            continue;
        }
        let gap_start = i;
        while values[i].is_none() {
            i += 1;
        }
        let gap = i - gap_start;
        if gap > max_gap_h {
            return Err(SeriesError::UnfillableGap {
                from: first + Duration::hours(gap_start as i64),
                until: first + Duration::hours(i as i64),
                hours: gap,
                max_h: max_gap_h,
            });
        }
        let before = out[gap_start - 1];
        let after = values[i].expect("gap ends on a value");
        for k in 1..=gap {
            let frac = k as f64 / (gap + 1) as f64;
            out.push(before + (after - before) * frac);
            filled.push(true);
        }
    }
    Ok(TimeSeries {
        start: first,
        step_s: 3600.0,
        values: out,
        filled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{CallIndex, InvocationRecord, Status, TargetKind, Workload};
    use crate::stats::classify_records;

    fn warm(t: DateTime<Utc>, ms: f64, i: usize) -> InvocationRecord {
        InvocationRecord {
            timestamp_utc: t,
            function_name: "f".into(),
            workload: Workload::Float,
            memory_mb: 128,
            copy_index: 0,
            loop_id: format!("l{i}"),
            call_index: CallIndex::Second,
            instance_id: "x".into(),
            cold: false,
            billed_duration_ms: ms,
            handler_duration_ms: ms,
            target_kind: TargetKind::Sim,
            status: Status::Ok,
        }
    }

    fn start() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2023-01-09T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    fn tz() -> Tz {
        "UTC".parse().unwrap()
    }

    #[test]
    fn two_hour_gap_is_filled() {
        let rs: Vec<_> = (0..72)
            .filter(|h| *h != 30 && *h != 31)
            .map(|h| {
                warm(
                    start() + Duration::hours(h) + Duration::minutes(5),
                    h as f64,
                    h as usize,
                )
            })
            .collect();
        let (c, _) = classify_records(&rs, 1200.0);
        let s = hourly_series(&c, tz(), 6).unwrap();
        assert_eq!(s.len(), 72);
        assert_eq!(s.filled.iter().filter(|f| **f).count(), 2);
        assert!(s.filled[30] && s.filled[31]);
        assert!((s.values[30] - 30.0).abs() < 1e-12);
        assert!((s.values[31] - 31.0).abs() < 1e-12);
        assert_eq!(s.start, start());
    }

    #[test]
    fn one_day_is_insufficient() {
        let rs: Vec<_> = (0..24)
            .map(|h| warm(start() + Duration::hours(h), 100.0, h as usize))
            .collect();
        let (c, _) = classify_records(&rs, 1200.0);
        assert!(matches!(
            hourly_series(&c, tz(), 6),
            Err(SeriesError::InsufficientData { got_h: 24, .. })
        ));
    }

    #[test]
    fn long_gap_is_rejected() {
        let rs: Vec<_> = (0..96)
            .filter(|h| !(40..50).contains(h))
            .map(|h| warm(start() + Duration::hours(h), 100.0, h as usize))
            .collect();
        let (c, _) = classify_records(&rs, 1200.0);
        match hourly_series(&c, tz(), 6) {
            Err(SeriesError::UnfillableGap { hours, from, .. }) => {
                assert_eq!(hours, 10);
                assert_eq!(from, start() + Duration::hours(40));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hourly_means() {
        let rs = vec![
            warm(start(), 100.0, 0),
            warm(start() + Duration::minutes(30), 120.0, 1),
            warm(start() + Duration::hours(47), 90.0, 2),
        ];
        let (c, _) = classify_records(&rs, 1200.0);
        let s = hourly_series(&c, tz(), 48).unwrap();
        assert_eq!(s.values[0], 110.0);
        assert_eq!(s.values[47], 90.0);
    }
}
