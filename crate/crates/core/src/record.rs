//! Invocation records, start-type classification and JSONL persistence.
//!
//! One record is written per line with keys in the declaration order of
//! [`InvocationRecord`]. Timestamps are RFC 3339 in UTC with millisecond
//! precision.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workload {
    Float,
    Matrix,
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Workload::Float => "float",
            Workload::Matrix => "matrix",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Http,
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

/// Position of a call within its loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum CallIndex {
    First,
    Second,
}

impl TryFrom<u8> for CallIndex {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(CallIndex::First),
            2 => Ok(CallIndex::Second),
            other => Err(format!("call_index must be 1 or 2, got {other}")),
        }
    }
}

impl From<CallIndex> for u8 {
    fn from(c: CallIndex) -> u8 {
        match c {
            CallIndex::First => 1,
            CallIndex::Second => 2,
        }
    }
}

mod ts_millis {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Outcome of one function invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvocationRecord {
    #[serde(with = "ts_millis")]
    pub timestamp_utc: DateTime<Utc>,
    pub function_name: String,
    pub workload: Workload,
    pub memory_mb: u32,
    pub copy_index: u32,
    pub loop_id: String,
    pub call_index: CallIndex,
    pub instance_id: String,
    pub cold: bool,
    pub billed_duration_ms: f64,
    pub handler_duration_ms: f64,
    pub target_kind: TargetKind,
    pub status: Status,
}

impl InvocationRecord {
    fn validate(&self) -> Result<(), String> {
        if self.memory_mb == 0 || !self.memory_mb.is_multiple_of(128) {
            return Err(format!(
                "memory_mb must be a positive multiple of 128, got {}",
                self.memory_mb
            ));
        }
        if !(self.billed_duration_ms >= 0.0) || !self.billed_duration_ms.is_finite() {
            return Err(format!(
                "billed_duration_ms must be finite and >= 0, got {}",
                self.billed_duration_ms
            ));
        }
        if !(self.handler_duration_ms >= 0.0) || !self.handler_duration_ms.is_finite() {
            return Err(format!(
                "handler_duration_ms must be finite and >= 0, got {}",
                self.handler_duration_ms
            ));
        }
        Ok(())
    }
}

/// Truncates a timestamp to the millisecond precision used on disk.
pub fn storage_time(t: DateTime<Utc>) -> DateTime<Utc> {
    t.trunc_subsecs(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StartClass {
    ExpectedCold,
    ExpectedWarm,
    UnexpectedCold,
    UnexpectedWarm,
}

impl StartClass {
    pub const ALL: [StartClass; 4] = [
        StartClass::ExpectedCold,
        StartClass::ExpectedWarm,
        StartClass::UnexpectedCold,
        StartClass::UnexpectedWarm,
    ];

    pub fn of(call_index: CallIndex, cold: bool) -> StartClass {
        match (call_index, cold) {
            (CallIndex::First, true) => StartClass::ExpectedCold,
            (CallIndex::First, false) => StartClass::UnexpectedWarm,
            (CallIndex::Second, false) => StartClass::ExpectedWarm,
            (CallIndex::Second, true) => StartClass::UnexpectedCold,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("refusing to classify failed invocation (loop {loop_id}, call {call_index})")]
pub struct ClassificationRefused {
    pub loop_id: String,
    pub call_index: u8,
}

pub fn classify(record: &InvocationRecord) -> Result<StartClass, ClassificationRefused> {
    match record.status {
        Status::Ok => Ok(StartClass::of(record.call_index, record.cold)),
        Status::Error => Err(ClassificationRefused {
            loop_id: record.loop_id.clone(),
            call_index: record.call_index.into(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("record file not found: {0}")]
    NotFound(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed records on line(s) {}", format_lines(.0))]
    Malformed(Vec<LineError>),
    #[error("append failed after {written} record(s): {source}")]
    Append {
        written: usize,
        #[source]
        source: io::Error,
    },
}

fn format_lines(errors: &[LineError]) -> String {
    errors
        .iter()
        .map(|e| format!("{} ({})", e.line, e.message))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Append-only JSONL writer. Each record becomes one `write_all` of a
/// complete line, serialized across threads.
pub struct RecordSink<W: Write = File> {
    inner: Mutex<W>,
}

impl RecordSink<File> {
    /// Opens `path` for appending, creating it if needed.
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self, RecordError> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| RecordError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self::new(file))
    }
}

impl<W: Write> RecordSink<W> {
    pub fn new(writer: W) -> Self {
        Self {
            inner: Mutex::new(writer),
        }
    }

    pub fn into_inner(self) -> W {
        self.inner.into_inner().unwrap_or_else(|p| p.into_inner())
    }

    /// Writes `records` one per line and returns how many were written.
    pub fn append(&self, records: &[InvocationRecord]) -> Result<usize, RecordError> {
        let mut w = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let mut written = 0;
        for r in records {
            let mut line = serde_json::to_vec(r).expect("records always serialize");
            line.push(b'\n');
            w.write_all(&line)
                .map_err(|source| RecordError::Append { written, source })?;
            written += 1;
        }
        w.flush()
            .map_err(|source| RecordError::Append { written, source })?;
        Ok(written)
    }
}

pub fn append_records<W: Write>(
    sink: &RecordSink<W>,
    records: &[InvocationRecord],
) -> Result<usize, RecordError> {
    sink.append(records)
}

/// Optional restriction applied while loading.
#[derive(Debug, Clone, Default)]
pub struct RecordFilter {
    pub function_name: Option<String>,
    pub memory_mb: Option<u32>,
    pub from: Option<DateTime<Utc>>,
    /// Exclusive upper bound.
    pub until: Option<DateTime<Utc>>,
}

impl RecordFilter {
    pub fn matches(&self, r: &InvocationRecord) -> bool {
        self.function_name
            .as_deref()
            .is_none_or(|f| f == r.function_name)
            && self.memory_mb.is_none_or(|m| m == r.memory_mb)
            && self.from.is_none_or(|t| r.timestamp_utc >= t)
            && self.until.is_none_or(|t| r.timestamp_utc < t)
    }
}

/// Parses JSONL records from a reader. Every malformed line is reported.
pub fn read_records(
    reader: impl BufRead,
    filter: Option<&RecordFilter>,
) -> Result<Vec<InvocationRecord>, RecordError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| RecordError::Io {
            path: PathBuf::from("<reader>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<InvocationRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r));
        match parsed {
            Ok(r) => {
                if filter.is_none_or(|f| f.matches(&r)) {
                    records.push(r);
                }
            }
            Err(message) => errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    if !errors.is_empty() {
        return Err(RecordError::Malformed(errors));
    }
    sort_records(&mut records);
    Ok(records)
}

pub fn load_records(
    path: impl AsRef<Path>,
    filter: Option<&RecordFilter>,
) -> Result<Vec<InvocationRecord>, RecordError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            RecordError::NotFound(path.to_path_buf())
        } else {
            RecordError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    read_records(BufReader::new(file), filter)
}

/// Timestamp order, ties broken by loop id and call index.
pub fn sort_records(records: &mut [InvocationRecord]) {
    records.sort_by(|a, b| {
        a.timestamp_utc
            .cmp(&b.timestamp_utc)
            .then_with(|| a.loop_id.cmp(&b.loop_id))
            .then_with(|| a.call_index.cmp(&b.call_index))
    });
}
