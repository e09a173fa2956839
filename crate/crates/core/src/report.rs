//! Analysis pipeline output: a summary document plus named CSV tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decompose::{
    default_penalty, detect_change_points_min_size, hourly_series, outlier_report,
    remainder_penalty, stl_decompose, trend_summary, ChangePointConfig, OutlierConfig,
    OutlierPopulation, PenaltyRule, StlParams, TimeSeries, TrendSummary,
};
use crate::record::{InvocationRecord, StartClass, TargetKind, Workload};
use crate::stats::{
    bucket_stats, class_counts, classify_records, ecdf, period_rates, relative_change,
    unexpected_cold_rates, unexpected_warm_rate, window_mean, BucketStat, Bucketing, Classified,
    Exclusions, HourRange, PeriodRate, PeriodWindows,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hours compared by the diurnal day/night ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiurnalWindows {
    pub night: HourRange,
    pub day: HourRange,
}

impl Default for DiurnalWindows {
    fn default() -> Self {
        Self {
            night: HourRange { start: 23, end: 6 },
            day: HourRange { start: 7, end: 16 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub tz: Tz,
    /// Pairs whose calls are this far apart or more are degenerate.
    pub cooldown_s: f64,
    pub windows: PeriodWindows,
    pub diurnal: DiurnalWindows,
    pub stl: StlParams,
    pub change_points: ChangePointConfig,
    pub outliers: OutlierConfig,
    /// Longest run of empty hours filled by interpolation.
    pub max_gap_h: usize,
}

impl AnalyzeOptions {
    pub fn new(tz: Tz) -> Self {
        Self {
            tz,
            cooldown_s: 1200.0,
            windows: PeriodWindows::default(),
            diurnal: DiurnalWindows::default(),
            stl: StlParams::default(),
            change_points: ChangePointConfig::default(),
            outliers: OutlierConfig::default(),
            max_gap_h: 6,
        }
    }
}

/// Written next to a records file by `simulate` and `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: Option<u64>,
    pub tool_version: String,
}

pub fn meta_path(records: &Path) -> PathBuf {
    let mut name = records.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub records_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diurnal {
    pub night_mean_ms: Option<f64>,
    pub day_mean_ms: Option<f64>,
    pub day_night_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub index: usize,
    pub time_utc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierHour {
    pub index: usize,
    pub time_utc: String,
    pub value_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DecompositionSummary {
    Present {
        hours: usize,
        filled_hours: usize,
        table: String,
        trend_summary: Option<TrendSummary>,
        penalty: f64,
        min_size: usize,
        change_points: Vec<ChangePoint>,
        outlier_threshold_ms: Option<f64>,
        outliers: Vec<OutlierHour>,
    },
    Absent {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub function_name: String,
    pub workload: Workload,
    pub memory_mb: u32,
    pub records: usize,
    pub expected_warm_calls: usize,
    pub diurnal: Diurnal,
    pub decomposition: DecompositionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub timezone: String,
    pub records: usize,
    pub class_counts: BTreeMap<StartClass, usize>,
    pub exclusions: Exclusions,
    pub unexpected_cold_rates: Vec<PeriodRate>,
    pub unexpected_warm_rate: Option<f64>,
    pub period_windows: PeriodWindows,
    /// How billed durations were obtained, per target kind present.
    pub billed_duration_source: Vec<String>,
    pub variants: Vec<VariantSummary>,
    pub warnings: Vec<String>,
    pub tables: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub summary: Summary,
    /// File name to CSV contents.
    pub tables: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no records")]
    NoRecords,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

type VariantKey = (String, Workload, u32);

fn variant_slug(key: &VariantKey) -> String {
    let name: String = key
        .0
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{name}-{}", key.2)
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    fn finish(self) -> String {
        let bytes = self.writer.into_inner().expect("in-memory flush");
        String::from_utf8(bytes).expect("csv fields are utf-8")
    }
}

fn stat_rows(csv: &mut Csv, key: &VariantKey, stats: &[BucketStat]) {
    for s in stats {
        csv.row([
            key.0.clone(),
            key.1.to_string(),
            key.2.to_string(),
            s.bucket_key.to_string(),
            s.n.to_string(),
            s.mean.to_string(),
            opt(s.ci95_half_width),
        ]);
    }
}

const STAT_HEADER: [&str; 7] = [
    "function_name",
    "workload",
    "memory_mb",
    "bucket_key",
    "n",
    "mean",
    "ci95",
];

/// Runs the full analysis over `records` (any order).
pub fn build_bundle(
    records: &[InvocationRecord],
    records_sha256: String,
    meta: Option<&RunMeta>,
    options: &AnalyzeOptions,
) -> Result<ReportBundle, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoRecords);
    }
    let tz = options.tz;
    let (classified, exclusions) = classify_records(records, options.cooldown_s);
    let mut warnings = Vec::new();
    let mut tables = BTreeMap::new();

    let mut variants: BTreeMap<VariantKey, Vec<Classified<'_>>> = BTreeMap::new();
    for c in &classified {
        let r = c.record;
        variants
            .entry((r.function_name.clone(), r.workload, r.memory_mb))
            .or_default()
            .push(*c);
    }

    let mut hod = Csv::new(&STAT_HEADER);
    let mut how = Csv::new(&STAT_HEADER);
    let mut rel = Csv::new(&[
        "function_name",
        "workload",
        "memory_mb",
        "hour_of_day",
        "rel",
        "ci95",
    ]);
    let mut cps = Csv::new(&["function_name", "memory_mb", "index", "time_utc"]);
    let mut outs = Csv::new(&[
        "function_name",
        "memory_mb",
        "index",
        "time_utc",
        "value_ms",
    ]);
    let mut variant_summaries = Vec::new();

    for (key, items) in &variants {
        let slug = variant_slug(key);
        let by_hour = bucket_stats(items, Bucketing::HourOfDay, tz);
        stat_rows(&mut hod, key, &by_hour);
        stat_rows(
            &mut how,
            key,
            &bucket_stats(items, Bucketing::HourOfWeek, tz),
        );
        if let Ok(changes) = relative_change(&by_hour) {
            for c in changes {
                rel.row([
                    key.0.clone(),
                    key.1.to_string(),
                    key.2.to_string(),
                    c.bucket_key.to_string(),
                    c.rel.to_string(),
                    opt(c.ci95_half_width),
                ]);
            }
        }
        let night = window_mean(&by_hour, options.diurnal.night);
        let day = window_mean(&by_hour, options.diurnal.day);
        let diurnal = Diurnal {
            night_mean_ms: night,
            day_mean_ms: day,
            day_night_ratio: night.zip(day).map(|(n, d)| d / n),
        };

        let decomposition = match decompose_variant(items, options) {
            Ok(d) => {
                let (summary, table) = d.emit(key, &slug, &mut cps, &mut outs);
                tables.insert(format!("decomposition_{slug}.csv"), table);
                summary
            }
            Err(reason) => {
                let w = format!("{slug}: decomposition absent: {reason}");
                log::warn!("{w}");
                warnings.push(w);
                DecompositionSummary::Absent { reason }
            }
        };

        variant_summaries.push(VariantSummary {
            function_name: key.0.clone(),
            workload: key.1,
            memory_mb: key.2,
            records: items.len(),
            expected_warm_calls: items.iter().filter(|c| c.is_expected_warm()).count(),
            diurnal,
            decomposition,
        });
    }

    // ECDF of expected-warm billed durations per (workload, memory).
    let mut ecdf_csv = Csv::new(&["workload", "memory_mb", "x", "F"]);
    let mut groups: BTreeMap<(Workload, u32), Vec<f64>> = BTreeMap::new();
    for c in classified.iter().filter(|c| c.is_expected_warm()) {
        groups
            .entry((c.record.workload, c.record.memory_mb))
            .or_default()
            .push(c.record.billed_duration_ms);
    }
    for ((w, m), values) in &groups {
        if let Ok(points) = ecdf(values) {
            for p in points {
                ecdf_csv.row([
                    w.to_string(),
                    m.to_string(),
                    p.x.to_string(),
                    p.f.to_string(),
                ]);
            }
        }
    }

    // Start-type rates pool all functions.
    let rate_header = ["bucket_key", "n", "rate", "ci95"];
    for (name, bucketing) in [
        ("unexpected_cold_hour_of_day.csv", Bucketing::HourOfDay),
        ("unexpected_cold_hour_of_week.csv", Bucketing::HourOfWeek),
    ] {
        let mut csv = Csv::new(&rate_header);
        for s in unexpected_cold_rates(&classified, bucketing, tz) {
            csv.row([
                s.bucket_key.to_string(),
                s.n.to_string(),
                s.mean.to_string(),
                opt(s.ci95_half_width),
            ]);
        }
        tables.insert(name.to_string(), csv.finish());
    }

    tables.insert("hour_of_day.csv".into(), hod.finish());
    tables.insert("hour_of_week.csv".into(), how.finish());
    tables.insert("relative_change_hour_of_day.csv".into(), rel.finish());
    tables.insert("ecdf.csv".into(), ecdf_csv.finish());
    tables.insert("change_points.csv".into(), cps.finish());
    tables.insert("outliers.csv".into(), outs.finish());

    let mut kinds: Vec<String> = Vec::new();
    for kind in [TargetKind::Sim, TargetKind::Http] {
        if records.iter().any(|r| r.target_kind == kind) {
            kinds.push(match kind {
                TargetKind::Sim => "sim: simulated billed duration".into(),
                TargetKind::Http => {
                    "http: approximation, handler-reported duration rounded up to the billing quantum"
                        .into()
                }
            });
        }
    }

    let summary = Summary {
        timezone: tz.name().to_string(),
        records: records.len(),
        class_counts: class_counts(&classified),
        exclusions,
        unexpected_cold_rates: period_rates(&classified, tz, &options.windows),
        unexpected_warm_rate: unexpected_warm_rate(&classified).ok(),
        period_windows: options.windows.clone(),
        billed_duration_source: kinds,
        variants: variant_summaries,
        warnings,
        tables: tables.keys().cloned().collect(),
        provenance: Provenance {
            config_hash: meta.map(|m| m.config_hash.clone()),
            seed: meta.and_then(|m| m.seed),
            tool_version: TOOL_VERSION.to_string(),
            records_sha256,
        },
    };
    Ok(ReportBundle { summary, tables })
}

struct VariantDecomposition {
    series: TimeSeries,
    trend: Vec<f64>,
    seasonal: Vec<f64>,
    remainder: Vec<f64>,
    trend_summary: Option<TrendSummary>,
    penalty: f64,
    min_size: usize,
    change_points: Vec<usize>,
    outlier_threshold: Option<f64>,
    outliers: Vec<usize>,
}

fn decompose_variant(
    items: &[Classified<'_>],
    options: &AnalyzeOptions,
) -> Result<VariantDecomposition, String> {
    let series = hourly_series(items, options.tz, options.max_gap_h).map_err(|e| e.to_string())?;
    let d = stl_decompose(&series, 24, &options.stl).map_err(|e| e.to_string())?;
    let (_, trend_span, _) = options.stl.spans(24);
    let cp = &options.change_points;
    let penalty = cp.penalty.unwrap_or_else(|| match cp.rule {
        PenaltyRule::RemainderScale => remainder_penalty(&d.remainder, trend_span),
        PenaltyRule::TrendDiffVariance => default_penalty(&d.trend),
    });
    let min_size = cp.min_size.unwrap_or(2 * trend_span);
    let change_points =
        detect_change_points_min_size(&d.trend, penalty, min_size).map_err(|e| e.to_string())?;

    let raw: Vec<f64>;
    let population = match options.outliers.population {
        OutlierPopulation::HourlyMeans => None,
        OutlierPopulation::RawInvocations => {
            raw = items
                .iter()
                .filter(|c| c.is_expected_warm())
                .map(|c| c.record.billed_duration_ms)
                .collect();
            Some(raw.as_slice())
        }
    };
    let (outliers, outlier_threshold) =
        match outlier_report(&series.values, population, &options.outliers) {
            Ok(r) => (r.indices, Some(r.threshold)),
            Err(e) => {
                log::warn!("outlier detection skipped: {e}");
                (Vec::new(), None)
            }
        };
    Ok(VariantDecomposition {
        trend_summary: trend_summary(&d.trend).ok(),
        series,
        trend: d.trend,
        seasonal: d.seasonal,
        remainder: d.remainder,
        penalty,
        min_size,
        change_points,
        outlier_threshold,
        outliers,
    })
}

impl VariantDecomposition {
    fn emit(
        &self,
        key: &VariantKey,
        slug: &str,
        cps: &mut Csv,
        outs: &mut Csv,
    ) -> (DecompositionSummary, String) {
        let mut table = Csv::new(&["t", "y", "T", "S", "I", "filled"]);
        for i in 0..self.series.len() {
            table.row([
                rfc3339(self.series.time_at(i)),
                self.series.values[i].to_string(),
                self.trend[i].to_string(),
                self.seasonal[i].to_string(),
                self.remainder[i].to_string(),
                self.series.filled[i].to_string(),
            ]);
        }
        let change_points: Vec<ChangePoint> = self
            .change_points
            .iter()
            .map(|&index| ChangePoint {
                index,
                time_utc: rfc3339(self.series.time_at(index)),
            })
            .collect();
        for c in &change_points {
            cps.row([
                key.0.clone(),
                key.2.to_string(),
                c.index.to_string(),
                c.time_utc.clone(),
            ]);
        }
        let outliers: Vec<OutlierHour> = self
            .outliers
            .iter()
            .map(|&index| OutlierHour {
                index,
                time_utc: rfc3339(self.series.time_at(index)),
                value_ms: self.series.values[index],
            })
            .collect();
        for o in &outliers {
            outs.row([
                key.0.clone(),
                key.2.to_string(),
                o.index.to_string(),
                o.time_utc.clone(),
                o.value_ms.to_string(),
            ]);
        }
        let summary = DecompositionSummary::Present {
            hours: self.series.len(),
            filled_hours: self.series.filled.iter().filter(|f| **f).count(),
            table: format!("decomposition_{slug}.csv"),
            trend_summary: self.trend_summary,
            penalty: self.penalty,
            min_size: self.min_size,
            change_points,
            outlier_threshold_ms: self.outlier_threshold,
            outliers,
        };
        (summary, table.finish())
    }
}

/// Writes `summary.json` and every table into `out_dir`.
pub fn write_bundle(bundle: &ReportBundle, out_dir: &Path) -> Result<(), ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    for (name, contents) in &bundle.tables {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(io(&path))?;
    }
    let path = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&bundle.summary).expect("summary serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io(&path))?;
    Ok(())
}
