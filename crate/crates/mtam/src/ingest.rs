//! Delimited event-log ingestion.
//!
//! Input is a header row naming at least `user`, `item`, `category` and
//! `timestamp` (any order, extra columns ignored), comma- or tab-delimited.

use std::fs;
use std::path::Path;

use mtam_core::data::{Event, EventLog};

use crate::error::{CliError, Result};

pub const REQUIRED_COLUMNS: [&str; 4] = ["user", "item", "category", "timestamp"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestOptions {
    /// Largest tolerated share of malformed rows.
    pub max_malformed_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            max_malformed_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MalformedRow {
    /// 1-based line number in the input.
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub log: EventLog,
    /// Data rows seen, malformed included.
    pub rows: usize,
    pub malformed: Vec<MalformedRow>,
    pub delimiter: u8,
}

/// Tab if the header line holds one, comma otherwise.
pub fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn parse_timestamp(raw: &str) -> std::result::Result<f64, String> {
    let t: f64 = raw
        .trim()
        .parse()
        .map_err(|_| format!("timestamp {raw:?} is not a number"))?;
    if !t.is_finite() || t < 0.0 {
        return Err(format!("timestamp {raw:?} must be finite and non-negative"));
    }
    Ok(t)
}

pub fn parse_events(text: &str, opts: IngestOptions) -> Result<Ingested> {
    let delimiter = detect_delimiter(text);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("unreadable header: {e}")))?
        .clone();
    let mut columns = [0usize; 4];
    for (slot, name) in columns.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| CliError::Data(format!("missing column {name:?}")))?;
    }
    let [cu, ci, cc, ct] = columns;

    let mut events = Vec::new();
    let mut malformed = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                malformed.push(MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).filter(|s| !s.is_empty());
        let parsed = match (field(cu), field(ci), field(cc), field(ct)) {
            (Some(u), Some(i), Some(c), Some(t)) => parse_timestamp(t).map(|timestamp| Event {
                user: u.to_string(),
                item: i.to_string(),
                category: c.to_string(),
                timestamp,
            }),
            _ => Err(format!(
                "expected {} non-empty fields",
                REQUIRED_COLUMNS.len()
            )),
        };
        match parsed {
            Ok(e) => events.push(e),
            Err(reason) => malformed.push(MalformedRow { line, reason }),
        }
    }
    if rows > 0 && malformed.len() as f64 > opts.max_malformed_fraction * rows as f64 {
        let first = &malformed[0];
        return Err(CliError::Data(format!(
            "{} of {rows} rows are malformed (limit {:.2}%); first at line {}: {}",
            malformed.len(),
            opts.max_malformed_fraction * 100.0,
            first.line,
            first.reason
        )));
    }
    Ok(Ingested {
        log: EventLog::new(events),
        rows,
        malformed,
        delimiter,
    })
}

pub fn read_events(path: &Path, opts: IngestOptions) -> Result<Ingested> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_events(&text, opts)
}

/// Writes `log` in the ingest format (comma-delimited, header first).
pub fn write_events(path: &Path, log: &EventLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(REQUIRED_COLUMNS).map_err(csv_err)?;
    for e in &log.events {
        w.write_record([
            e.user.as_str(),
            e.item.as_str(),
            e.category.as_str(),
            &e.timestamp.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(path))
}
