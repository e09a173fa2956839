//! Command implementations behind the `variability` binary.
//!
//! Exit codes: 0 success (including partial analysis), 1 runtime failure,
//! 2 usage or validation error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::decompose::{ChangePointConfig, OutlierConfig, StlParams};
use crate::record::{load_records, RecordSink};
use crate::report::{
    build_bundle, meta_path, sha256_hex, write_bundle, AnalyzeOptions, DiurnalWindows, ReportError,
    RunMeta, TOOL_VERSION,
};
use crate::scheduler::{run_campaign, CampaignConfig, CampaignSummary};
use crate::sim::{SimScenario, SimTarget};
use crate::stats::PeriodWindows;
use crate::target::{HttpTarget, HttpTargetConfig};
use crate::time::{parse_tz, SystemClock, VirtualClock};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// Prints the error and maps a command result to its exit code.
pub fn exit_code(result: Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Start of simulated campaigns without an explicit `start`.
pub fn default_sim_start() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2022-12-12T00:00:00+01:00")
        .expect("valid constant")
        .with_timezone(&Utc)
}

fn load_config(path: &Path) -> Result<CampaignConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    CampaignConfig::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))
}

fn config_hash(parts: &[&[u8]]) -> String {
    let mut joined = Vec::new();
    for p in parts {
        joined.extend_from_slice(p);
        joined.push(0);
    }
    sha256_hex(&joined)
}

fn write_meta(records: &Path, meta: &RunMeta) -> Result<(), CliError> {
    let path = meta_path(records);
    let mut json = serde_json::to_string_pretty(meta).expect("meta serializes");
    json.push('\n');
    fs::write(&path, json)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn report_campaign(summary: &CampaignSummary) {
    eprintln!(
        "{} calls ok, {} errors, {:.1}s wall time",
        summary.calls_made,
        summary.errors,
        summary.wall_time.as_secs_f64()
    );
}

/// Runs a live campaign against HTTP endpoints, appending to `records_out`.
pub fn cmd_run(config_path: &Path, records_out: &Path) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let mut target = HttpTarget::new(HttpTargetConfig {
        run_id: config.run_id.clone(),
        billing_quantum_ms: config.billing_quantum_ms,
        timeout: Duration::from_secs_f64(config.timeout_s),
        bearer_token: config.bearer_token.clone(),
    });
    for f in &config.functions {
        let endpoint = f.endpoint.as_deref().ok_or_else(|| {
            CliError::Usage(format!(
                "function {} ({} MB) has no endpoint",
                f.function_name, f.memory_mb
            ))
        })?;
        target.add_endpoint(f.key_name(), f.memory_mb, endpoint);
    }
    let sink = RecordSink::append_to(records_out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let summary = run_campaign(&config, &target, &SystemClock, &sink)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut hashed = config.clone();
    hashed.bearer_token = None;
    write_meta(
        records_out,
        &RunMeta {
            config_hash: config_hash(&[&serde_json::to_vec(&hashed).expect("config serializes")]),
            seed: None,
            tool_version: TOOL_VERSION.into(),
        },
    )?;
    report_campaign(&summary);
    Ok(())
}

/// Runs a campaign against the simulator on a virtual clock, replacing
/// `records_out`. Without a scenario file the bundled `paper-gcf.json` is used.
pub fn cmd_simulate(
    config_path: &Path,
    scenario_path: Option<&Path>,
    records_out: &Path,
    acceleration: Option<f64>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut config = load_config(config_path)?;
    let mut scenario = match scenario_path {
        Some(p) => SimScenario::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => SimScenario::paper_default(),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    for f in &config.functions {
        if !scenario.tiers.contains_key(&f.memory_mb)
            && !scenario.mid_tier_mixing.contains_key(&f.memory_mb)
        {
            return Err(CliError::Usage(format!(
                "scenario has no tier or mixing rule for {} MB ({})",
                f.memory_mb, f.function_name
            )));
        }
    }
    if let Some(a) = acceleration {
        if !(a > 0.0) || !a.is_finite() {
            return Err(CliError::Usage(format!(
                "--accel must be positive, got {a}"
            )));
        }
    }
    if scenario.keep_alive_s >= config.cooldown_s {
        log::warn!(
            "keep-alive {}s is not shorter than the cooldown {}s; first calls will rarely be cold",
            scenario.keep_alive_s,
            config.cooldown_s
        );
    }
    let start = *config.start.get_or_insert_with(default_sim_start);
    let target = SimTarget::new(scenario.clone(), config.billing_quantum_ms)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut clock = VirtualClock::new(start);
    if let Some(a) = acceleration {
        clock = clock.with_acceleration(a);
    }
    let file = File::create(records_out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", records_out.display())))?;
    let sink = RecordSink::new(BufWriter::new(file));
    let summary = run_campaign(&config, &target, &clock, &sink)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    drop(sink.into_inner());
    let hash = config_hash(&[
        &serde_json::to_vec(&config).expect("config serializes"),
        &serde_json::to_vec(&scenario).expect("scenario serializes"),
    ]);
    write_meta(
        records_out,
        &RunMeta {
            config_hash: hash,
            seed: Some(scenario.seed),
            tool_version: TOOL_VERSION.into(),
        },
    )?;
    report_campaign(&summary);
    Ok(())
}

/// Optional overrides for `analyze`, read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub cooldown_s: f64,
    pub period_windows: PeriodWindows,
    pub diurnal_windows: DiurnalWindows,
    pub stl: StlParams,
    pub change_points: ChangePointConfig,
    pub outliers: OutlierConfig,
    pub max_gap_h: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let o = AnalyzeOptions::new(chrono_tz::UTC);
        Self {
            cooldown_s: o.cooldown_s,
            period_windows: o.windows,
            diurnal_windows: o.diurnal,
            stl: o.stl,
            change_points: o.change_points,
            outliers: o.outliers,
            max_gap_h: o.max_gap_h,
        }
    }
}

impl AnalysisConfig {
    pub fn options(self, tz: chrono_tz::Tz) -> AnalyzeOptions {
        AnalyzeOptions {
            tz,
            cooldown_s: self.cooldown_s,
            windows: self.period_windows,
            diurnal: self.diurnal_windows,
            stl: self.stl,
            change_points: self.change_points,
            outliers: self.outliers,
            max_gap_h: self.max_gap_h,
        }
    }
}

/// Analyzes a records file and writes the report bundle into `out_dir`.
pub fn cmd_analyze(
    records_path: &Path,
    tz: &str,
    out_dir: &Path,
    config_path: Option<&Path>,
) -> Result<(), CliError> {
    let tz = parse_tz(tz).map_err(|e| CliError::Usage(e.to_string()))?;
    let analysis = match config_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<AnalysisConfig>(&text)
                .map_err(|e| CliError::Usage(format!("invalid analysis config: {e}")))?
        }
        None => AnalysisConfig::default(),
    };
    let bytes = fs::read(records_path).map_err(|e| {
        CliError::Runtime(format!(
            "cannot read records {}: {e}",
            records_path.display()
        ))
    })?;
    let records = load_records(records_path, None).map_err(|e| CliError::Runtime(e.to_string()))?;
    let meta: Option<RunMeta> = fs::read_to_string(meta_path(records_path))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let bundle = build_bundle(
        &records,
        sha256_hex(&bytes),
        meta.as_ref(),
        &analysis.options(tz),
    )
    .map_err(|e| match e {
        ReportError::NoRecords => CliError::Runtime("no records".into()),
        other => CliError::Runtime(other.to_string()),
    })?;
    write_bundle(&bundle, out_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    for w in &bundle.summary.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{} records analyzed, bundle written to {}",
        bundle.summary.records,
        out_dir.display()
    );
    Ok(())
}

/// Default output directory for `analyze`.
pub fn default_out_dir(records: &Path) -> PathBuf {
    let mut name = records.as_os_str().to_owned();
    name.push(".report");
    PathBuf::from(name)
}
