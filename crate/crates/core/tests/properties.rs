mod common;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

use common::{record, utc};
use variability::decompose::{
    detect_change_points, detect_outliers, stl_values, trend_summary, StlParams, TimeSeries,
};
use variability::record::{
    read_records, storage_time, CallIndex, InvocationRecord, RecordSink, StartClass, Status,
    TargetKind, Workload,
};
use variability::stats::{
    bucket_stats, classify_records, ecdf, relative_change, unexpected_cold_rates, BucketStat,
    Bucketing,
};
use variability::target::quantize_billed;

fn arb_record() -> impl Strategy<Value = InvocationRecord> {
    (
        0i64..4_000_000_000_000,
        "[a-z][a-z0-9_-]{0,11}",
        prop::bool::ANY,
        1u32..16,
        0u32..30,
        "[a-z0-9/_-]{1,20}",
        prop::bool::ANY,
        "[A-Za-z0-9-]{1,16}",
        prop::bool::ANY,
        (0.0f64..1e6, 0.0f64..1e6),
        prop::bool::ANY,
        prop::bool::ANY,
    )
        .prop_map(
            |(
                ms,
                name,
                matrix,
                tier,
                copy,
                loop_id,
                second,
                inst,
                cold,
                (billed, handler),
                http,
                err,
            )| {
                InvocationRecord {
                    timestamp_utc: Utc.timestamp_millis_opt(ms).unwrap(),
                    function_name: name,
                    workload: if matrix {
                        Workload::Matrix
                    } else {
                        Workload::Float
                    },
                    memory_mb: tier * 128,
                    copy_index: copy,
                    loop_id,
                    call_index: if second {
                        CallIndex::Second
                    } else {
                        CallIndex::First
                    },
                    instance_id: inst,
                    cold,
                    billed_duration_ms: billed,
                    handler_duration_ms: handler,
                    target_kind: if http {
                        TargetKind::Http
                    } else {
                        TargetKind::Sim
                    },
                    status: if err { Status::Error } else { Status::Ok },
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jsonl_round_trip_is_field_exact(records in prop::collection::vec(arb_record(), 1..40)) {
        let sink = RecordSink::new(Vec::new());
        prop_assert_eq!(sink.append(&records).unwrap(), records.len());
        let bytes = sink.into_inner();
        let mut back = read_records(bytes.as_slice(), None).unwrap();
        let mut expected = records.clone();
        variability::record::sort_records(&mut expected);
        variability::record::sort_records(&mut back);
        prop_assert_eq!(back, expected);
    }

    #[test]
    fn storage_time_is_idempotent(ns in 0i64..4_000_000_000_000_000_000) {
        let t = Utc.timestamp_nanos(ns);
        let s = storage_time(t);
        prop_assert_eq!(storage_time(s), s);
        prop_assert!(t - s < Duration::milliseconds(1) && s <= t);
    }

    #[test]
    fn classification_matches_truth_table(second in prop::bool::ANY, cold in prop::bool::ANY) {
        let expected = match (second, cold) {
            (false, true) => StartClass::ExpectedCold,
            (false, false) => StartClass::UnexpectedWarm,
            (true, false) => StartClass::ExpectedWarm,
            (true, true) => StartClass::UnexpectedCold,
        };
        let call = if second { CallIndex::Second } else { CallIndex::First };
        prop_assert_eq!(StartClass::of(call, cold), expected);
    }

    #[test]
    fn quantize_is_monotone_and_tight(a in 0.0f64..1e5, b in 0.0f64..1e5, q in prop::sample::select(vec![0.1, 1.0, 100.0])) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (ql, qh) = (quantize_billed(lo, q).unwrap(), quantize_billed(hi, q).unwrap());
        prop_assert!(ql <= qh);
        prop_assert!(ql >= lo && ql - lo < q * (1.0 + 1e-9));
    }

    #[test]
    fn ecdf_counts(values in prop::collection::vec(0u16..50, 1..200)) {
        let xs: Vec<f64> = values.iter().map(|v| *v as f64).collect();
        let points = ecdf(&xs).unwrap();
        prop_assert_eq!(points.last().unwrap().f, 1.0);
        prop_assert!(points[0].f > 0.0);
        for w in points.windows(2) {
            prop_assert!(w[0].x < w[1].x && w[0].f <= w[1].f);
        }
        for p in &points {
            let count = xs.iter().filter(|v| **v <= p.x).count();
            prop_assert_eq!(p.f, count as f64 / xs.len() as f64);
        }
    }

    #[test]
    fn relative_change_weighted_mean_is_zero(buckets in prop::collection::vec((1usize..500, 1.0f64..1000.0), 1..48)) {
        let stats: Vec<BucketStat> = buckets
            .iter()
            .enumerate()
            .map(|(k, (n, mean))| BucketStat { bucket_key: k, n: *n, mean: *mean, ci95_half_width: None })
            .collect();
        let rel = relative_change(&stats).unwrap();
        let total: usize = stats.iter().map(|s| s.n).sum();
        let weighted: f64 = rel.iter().zip(&stats).map(|(r, s)| r.rel * s.n as f64).sum::<f64>() / total as f64;
        prop_assert!(weighted.abs() < 1e-12, "weighted mean {}", weighted);
    }

    #[test]
    fn rate_ci_scales_with_inverse_sqrt_n(colds in 0usize..50, warms in 1usize..200) {
        let start = utc("2023-01-09T10:00:00Z");
        let mut records = Vec::new();
        for i in 0..colds + warms {
            let id = format!("p{i}");
            let t = start + Duration::seconds(i as i64);
            records.push(record(t, &id, CallIndex::Second, i < colds, 100.0));
        }
        let mut doubled = records.clone();
        for r in &records {
            let mut copy = r.clone();
            copy.loop_id.push_str("-dup");
            doubled.push(copy);
        }
        let tz = chrono_tz::UTC;
        let (a, _) = classify_records(&records, 1200.0);
        let (b, _) = classify_records(&doubled, 1200.0);
        let ra = &unexpected_cold_rates(&a, Bucketing::HourOfDay, tz)[0];
        let rb = &unexpected_cold_rates(&b, Bucketing::HourOfDay, tz)[0];
        prop_assert_eq!(ra.mean, rb.mean);
        let (ha, hb) = (ra.ci95_half_width.unwrap(), rb.ci95_half_width.unwrap());
        prop_assert!((hb - ha / 2f64.sqrt()).abs() <= 1e-9);
        let (lo, hi) = ra.interval_within(0.0, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }

    #[test]
    fn mean_ci_scales_with_inverse_sqrt_n(values in prop::collection::vec(50.0f64..150.0, 2..100)) {
        let start = utc("2023-01-09T10:00:00Z");
        let build = |copies: usize| {
            let mut out = Vec::new();
            for c in 0..copies {
                for (i, v) in values.iter().enumerate() {
                    let id = format!("c{c}-{i}");
                    out.push(record(start + Duration::seconds(i as i64), &id, CallIndex::Second, false, *v));
                }
            }
            out
        };
        let (one, two) = (build(1), build(2));
        let tz = chrono_tz::UTC;
        let (a, _) = classify_records(&one, 1200.0);
        let (b, _) = classify_records(&two, 1200.0);
        let sa = &bucket_stats(&a, Bucketing::HourOfDay, tz)[0];
        let sb = &bucket_stats(&b, Bucketing::HourOfDay, tz)[0];
        let n = values.len() as f64;
        // The sample variance of duplicated data carries the Bessel factor
        // 2(n - 1) / (2n - 1) relative to the original.
        let bessel = (2.0 * (n - 1.0) / (2.0 * n - 1.0)).sqrt();
        if let (Some(ha), Some(hb)) = (sa.ci95_half_width, sb.ci95_half_width) {
            prop_assert!((hb - ha * bessel / 2f64.sqrt()).abs() <= 1e-9 * ha.max(1.0));
        }
    }

    #[test]
    fn stl_reconstructs_exactly(
        days in 14usize..30,
        level in 10.0f64..1000.0,
        amp in 0.0f64..50.0,
        noise in prop::collection::vec(-5.0f64..5.0, 30 * 24),
    ) {
        let n = days * 24;
        let y: Vec<f64> = (0..n)
            .map(|t| level + amp * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + noise[t])
            .collect();
        let d = stl_values(&y, 24, &StlParams::default()).unwrap();
        for t in 0..n {
            let err = (y[t] - (d.trend[t] + d.seasonal[t] + d.remainder[t])).abs();
            prop_assert!(err <= 1e-9 * y[t].abs().max(1.0));
        }
        let mean_s = d.seasonal.iter().sum::<f64>() / n as f64;
        prop_assert!(mean_s.abs() <= 1e-12 * level);
    }

    #[test]
    fn change_points_shift_invariant(
        base in prop::collection::vec(-1.0f64..1.0, 40..120),
        step in 5.0f64..20.0,
        shift in -1e3f64..1e3,
    ) {
        let n = base.len();
        let y: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + if i >= n / 2 { step } else { 0.0 }).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        prop_assert_eq!(detect_change_points(&y, 10.0).unwrap(), detect_change_points(&shifted, 10.0).unwrap());
        prop_assert_eq!(detect_change_points(&vec![shift; n], 1.0).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn outliers_shift_invariant(values in prop::collection::vec(0u16..100, 8..200), shift in -100i32..100) {
        // Integer-valued data keeps the shifted quartiles exact.
        let series = |offset: f64| TimeSeries {
            start: utc("2023-01-01T00:00:00Z"),
            step_s: 3600.0,
            values: values.iter().map(|v| *v as f64 + offset).collect(),
            filled: vec![false; values.len()],
        };
        prop_assert_eq!(
            detect_outliers(&series(0.0), 4.0).unwrap(),
            detect_outliers(&series(shift as f64), 4.0).unwrap()
        );
    }

    #[test]
    fn trend_summary_bounds(trend in prop::collection::vec(1.0f64..1000.0, 1..100)) {
        let s = trend_summary(&trend).unwrap();
        prop_assert!(s.min <= s.max && s.rel_change >= 0.0);
        prop_assert!((s.rel_change - (s.max - s.min) / s.min).abs() < 1e-15);
    }
}
