//! Cohort manifests and per-participant event logs.
//!
//! Manifest: optional `# study_start: <rfc3339>` / `# study_end: <rfc3339>`
//! lines, then a CSV header
//! `id,country,gender,age_range,education,employment,tz_offset_minutes,r1..r50,log_path`
//! and one row per participant. Log paths are relative to the manifest.
//!
//! Event log: JSON lines. An optional first line `{"streams":[...]}` lists the
//! categories the participant shared; every other line is one record such as
//! `{"t":"2018-03-05T10:00:00.000Z","category":"noise","level_db":41.5}`.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Category, Participant, Payload, Responses, SensorEvent, ITEM_COUNT};

pub const DEFAULT_MALFORMED_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file} line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("duplicate participant id `{0}`")]
    DuplicateId(String),
    #[error("participant {participant}: {bad} of {total} lines malformed (tolerance {tolerance})")]
    Malformed { participant: String, bad: usize, total: usize, tolerance: f64 },
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Parse { file: file.to_string(), line, msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub participant: Participant,
    pub log_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub study_start: DateTime<Utc>,
    pub study_end: DateTime<Utc>,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative log paths resolve against.
    pub base_dir: PathBuf,
}

impl CohortManifest {
    pub fn log_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.log_path.is_absolute() {
            entry.log_path.clone()
        } else {
            self.base_dir.join(&entry.log_path)
        }
    }

    pub fn participants(&self) -> Vec<Participant> {
        self.entries.iter().map(|e| e.participant.clone()).collect()
    }
}

pub fn manifest_header() -> Vec<String> {
    let mut h: Vec<String> = ["id", "country", "gender", "age_range", "education", "employment", "tz_offset_minutes"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=ITEM_COUNT).map(|i| format!("r{i}")));
    h.push("log_path".into());
    h
}

pub fn format_instant(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim()).map(|t| t.with_timezone(&Utc)).map_err(|e| format!("bad instant `{s}`: {e}"))
}

pub fn parse_manifest_str(text: &str, base_dir: &Path, file: &str) -> Result<CohortManifest, IngestError> {
    let mut start = None;
    let mut end = None;
    let mut body = String::new();
    let mut body_first_line = 0;
    for (i, line) in text.lines().enumerate() {
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once(':') {
                match k.trim() {
                    "study_start" => start = Some(parse_instant(v).map_err(|m| parse_err(file, i + 1, m))?),
                    "study_end" => end = Some(parse_instant(v).map_err(|m| parse_err(file, i + 1, m))?),
                    _ => {}
                }
            }
            continue;
        }
        if body.is_empty() {
            body_first_line = i + 1;
        }
        body.push_str(line);
        body.push('\n');
    }
    if body.trim().is_empty() {
        return Err(parse_err(file, 1, "empty manifest"));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(file, body_first_line, e.to_string()))?.clone();
    let expected = manifest_header();
    if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(parse_err(file, body_first_line, "unexpected header"));
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = body_first_line + 1 + k;
        let rec = rec.map_err(|e| parse_err(file, line, e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let named = |i: usize, e: String| parse_err(file, line, format!("{}: {e}", expected[i]));
        let responses: Vec<i64> = (7..7 + ITEM_COUNT)
            .map(|i| field(i).parse::<i64>().map_err(|e| named(i, e.to_string())))
            .collect::<Result<_, _>>()?;
        let participant = Participant {
            id: field(0).to_string(),
            country: field(1).parse().map_err(|e: crate::types::UnknownVariant| named(1, e.to_string()))?,
            gender: field(2).parse().map_err(|e: crate::types::UnknownVariant| named(2, e.to_string()))?,
            age_range: field(3).parse().map_err(|e: crate::types::UnknownVariant| named(3, e.to_string()))?,
            education: field(4).parse().map_err(|e: crate::types::UnknownVariant| named(4, e.to_string()))?,
            employment: field(5).parse().map_err(|e: crate::types::UnknownVariant| named(5, e.to_string()))?,
            tz_offset_minutes: field(6).parse().map_err(|e: std::num::ParseIntError| named(6, e.to_string()))?,
            responses: Responses::new(&responses).map_err(|e| parse_err(file, line, e.to_string()))?,
        };
        participant.validate().map_err(|e| parse_err(file, line, e.to_string()))?;
        if !seen.insert(participant.id.clone()) {
            return Err(IngestError::DuplicateId(participant.id));
        }
        entries.push(ManifestEntry { participant, log_path: PathBuf::from(field(7 + ITEM_COUNT)) });
    }
    if entries.is_empty() {
        return Err(parse_err(file, body_first_line, "manifest has no participants"));
    }
    let study_start = start.ok_or_else(|| parse_err(file, 1, "missing `# study_start:`"))?;
    let study_end = end.ok_or_else(|| parse_err(file, 1, "missing `# study_end:`"))?;
    if study_end - study_start < Duration::days(1) {
        return Err(parse_err(file, 1, "study window shorter than one day"));
    }
    Ok(CohortManifest { study_start, study_end, entries, base_dir: base_dir.to_path_buf() })
}

pub fn parse_manifest(path: &Path) -> Result<CohortManifest, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.into(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest_str(&text, base, &path.display().to_string())
}

pub fn write_manifest(w: &mut impl Write, m: &CohortManifest) -> std::io::Result<()> {
    writeln!(w, "# study_start: {}", format_instant(m.study_start))?;
    writeln!(w, "# study_end: {}", format_instant(m.study_end))?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(manifest_header())?;
    for e in &m.entries {
        let p = &e.participant;
        let mut row = vec![
            p.id.clone(),
            p.country.to_string(),
            p.gender.to_string(),
            p.age_range.to_string(),
            p.education.to_string(),
            p.employment.to_string(),
            p.tz_offset_minutes.to_string(),
        ];
        row.extend(p.responses.as_slice().iter().map(u8::to_string));
        row.push(e.log_path.to_string_lossy().into_owned());
        wtr.write_record(row)?;
    }
    wtr.flush()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub participant_id: String,
    pub events: Vec<SensorEvent>,
    /// Categories the participant shared.
    pub streams: BTreeSet<Category>,
    pub dropped_outside_window: usize,
    pub malformed_lines: usize,
}

impl EventLog {
    /// True when `other` carries the same events and streams.
    pub fn same_content(&self, other: &EventLog) -> bool {
        self.events == other.events && self.streams == other.streams
    }
}

#[derive(Serialize, Deserialize)]
struct StreamsHeader {
    streams: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    t: String,
    #[serde(flatten)]
    payload: Payload,
}

pub fn event_to_line(ev: &SensorEvent) -> String {
    serde_json::to_string(&Record { t: format_instant(ev.timestamp), payload: ev.payload.clone() })
        .expect("records serialize")
}

fn parse_record(line: &str) -> Result<SensorEvent, String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let timestamp = parse_instant(&rec.t)?;
    rec.payload.validate()?;
    Ok(SensorEvent { timestamp, payload: rec.payload })
}

/// Canonical order: timestamp, then category, then serialized payload.
pub fn sort_events(events: &mut [SensorEvent]) {
    events.sort_by(|a, b| {
        a.timestamp.cmp(&b.timestamp).then_with(|| a.category().cmp(&b.category())).then_with(|| {
            serde_json::to_string(&a.payload).unwrap_or_default().cmp(&serde_json::to_string(&b.payload).unwrap_or_default())
        })
    });
}

/// Parses a log, keeping events in `[start, end)`.
pub fn parse_event_log_str(
    text: &str,
    participant_id: &str,
    window: (DateTime<Utc>, DateTime<Utc>),
    tolerance: f64,
) -> Result<EventLog, IngestError> {
    let mut log = EventLog { participant_id: participant_id.to_string(), ..Default::default() };
    let mut header = None;
    let mut total = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 && line.starts_with("{\"streams\"") {
            if let Ok(h) = serde_json::from_str::<StreamsHeader>(line) {
                header = Some(h.streams.into_iter().collect::<BTreeSet<_>>());
                continue;
            }
        }
        total += 1;
        match parse_record(line) {
            Ok(ev) if ev.timestamp < window.0 || ev.timestamp >= window.1 => log.dropped_outside_window += 1,
            Ok(ev) => log.events.push(ev),
            Err(_) => log.malformed_lines += 1,
        }
    }
    if total > 0 && log.malformed_lines as f64 / total as f64 > tolerance {
        return Err(IngestError::Malformed {
            participant: participant_id.to_string(),
            bad: log.malformed_lines,
            total,
            tolerance,
        });
    }
    sort_events(&mut log.events);
    log.streams = header.unwrap_or_else(|| log.events.iter().map(SensorEvent::category).collect());
    Ok(log)
}

pub fn parse_event_log(
    path: &Path,
    participant_id: &str,
    window: (DateTime<Utc>, DateTime<Utc>),
    tolerance: f64,
) -> Result<EventLog, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.into(), source })?;
    parse_event_log_str(&text, participant_id, window, tolerance)
}

pub fn event_log_to_string(log: &EventLog) -> String {
    let mut out = serde_json::to_string(&StreamsHeader { streams: log.streams.iter().copied().collect() })
        .expect("header serializes");
    out.push('\n');
    for ev in &log.events {
        let _ = writeln!(out, "{}", event_to_line(ev));
    }
    out
}

/// Parses every participant's log in parallel, in manifest order.
pub fn load_logs(manifest: &CohortManifest, tolerance: f64) -> Result<Vec<EventLog>, IngestError> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            parse_event_log(
                &manifest.log_path(e),
                &e.participant.id,
                (manifest.study_start, manifest.study_end),
                tolerance,
            )
        })
        .collect()
}
