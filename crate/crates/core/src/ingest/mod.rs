//! Crash-report corpora: newline-delimited JSON loading, time windows and
//! run configuration.
//!
//! Each input line is one object with the keys `crash_id`, `timestamp`
//! (RFC 3339), `uri`, `user` (nullable), `session_id` (nullable) and
//! `stack_trace`. Unknown keys are ignored so raw log-store exports can be
//! fed in directly.

mod config;
mod window;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

pub use config::AppConfig;
pub use window::{format_instant, parse_instant, weekly_windows, TimeWindow};

use crate::error::IngestError;
use crate::trace_model::{parse_stack_trace, StackTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct CrashReport {
    pub crash_id: String,
    pub timestamp: DateTime<Utc>,
    pub uri: String,
    pub user: Option<String>,
    pub session_id: Option<String>,
    /// Shared between reports with byte-identical raw traces.
    pub trace: Arc<StackTrace>,
}

/// One line of the export format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrashRecord {
    pub crash_id: String,
    pub timestamp: String,
    pub uri: String,
    pub user: Option<String>,
    pub session_id: Option<String>,
    pub stack_trace: String,
}

impl From<&CrashReport> for CrashRecord {
    fn from(r: &CrashReport) -> Self {
        Self {
            crash_id: r.crash_id.clone(),
            timestamp: format_instant(r.timestamp),
            uri: r.uri.clone(),
            user: r.user.clone(),
            session_id: r.session_id.clone(),
            stack_trace: r.trace.raw_text.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    /// Unparseable JSON, bad timestamps, or traces without frames.
    pub malformed: usize,
    pub out_of_window: usize,
    pub duplicate: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.malformed + self.out_of_window + self.duplicate
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Fail on the first malformed record or duplicate id instead of
    /// skipping it.
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct CrashCorpus {
    reports: Vec<CrashReport>,
    window: TimeWindow,
    skipped: SkipCounts,
    index: HashMap<String, usize>,
}

impl CrashCorpus {
    /// Builds a corpus from in-memory reports. Reports outside `window` are
    /// dropped and counted; without a window the corpus spans its reports.
    pub fn from_reports(reports: Vec<CrashReport>, window: Option<TimeWindow>) -> Result<Self, IngestError> {
        let mut skipped = SkipCounts::default();
        let mut kept = Vec::with_capacity(reports.len());
        let mut index = HashMap::with_capacity(reports.len());
        for (i, report) in reports.into_iter().enumerate() {
            if window.is_some_and(|w| !w.contains(report.timestamp)) {
                skipped.out_of_window += 1;
                continue;
            }
            if index.contains_key(&report.crash_id) {
                return Err(IngestError::DuplicateId {
                    crash_id: report.crash_id,
                    line: i + 1,
                });
            }
            index.insert(report.crash_id.clone(), kept.len());
            kept.push(report);
        }
        let window = window.unwrap_or_else(|| span_of(&kept));
        Ok(Self {
            reports: kept,
            window,
            skipped,
            index,
        })
    }

    pub fn empty(window: TimeWindow) -> Self {
        Self {
            reports: Vec::new(),
            window,
            skipped: SkipCounts::default(),
            index: HashMap::new(),
        }
    }

    pub fn reports(&self) -> &[CrashReport] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn window(&self) -> TimeWindow {
        self.window
    }

    pub fn window_start(&self) -> DateTime<Utc> {
        self.window.start
    }

    pub fn window_end(&self) -> DateTime<Utc> {
        self.window.end
    }

    pub fn skipped(&self) -> SkipCounts {
        self.skipped
    }

    pub fn skipped_count(&self) -> usize {
        self.skipped.total()
    }

    pub fn get(&self, crash_id: &str) -> Option<&CrashReport> {
        self.index.get(crash_id).map(|&i| &self.reports[i])
    }

    pub fn position(&self, crash_id: &str) -> Option<usize> {
        self.index.get(crash_id).copied()
    }
}

/// `[earliest, latest + 1s)`, or an empty window at the epoch.
fn span_of(reports: &[CrashReport]) -> TimeWindow {
    let first = reports.iter().map(|r| r.timestamp).min();
    let last = reports.iter().map(|r| r.timestamp).max();
    match (first, last) {
        (Some(first), Some(last)) => TimeWindow::new(first, last + Duration::seconds(1)),
        _ => TimeWindow::new(DateTime::UNIX_EPOCH, DateTime::UNIX_EPOCH),
    }
}

pub fn load_corpus(path: &Path, window: Option<TimeWindow>, options: LoadOptions) -> Result<CrashCorpus, IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_owned(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    read_corpus(BufReader::new(file), window, options).map_err(|e| match e {
        IngestError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Streams records from `reader`. Report order follows input order.
pub fn read_corpus<R: BufRead>(
    reader: R,
    window: Option<TimeWindow>,
    options: LoadOptions,
) -> Result<CrashCorpus, IngestError> {
    let mut reports = Vec::new();
    let mut index = HashMap::new();
    let mut skipped = SkipCounts::default();
    // Parsed traces keyed by raw text; `None` caches a malformed trace.
    let mut traces: HashMap<String, Option<Arc<StackTrace>>> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: Default::default(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String, skipped: &mut SkipCounts| {
            if options.strict {
                Err(IngestError::Format { line: line_no, reason })
            } else {
                skipped.malformed += 1;
                Ok(())
            }
        };

        let record: CrashRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                malformed(e.to_string(), &mut skipped)?;
                continue;
            }
        };
        let timestamp = match DateTime::parse_from_rfc3339(&record.timestamp) {
            Ok(t) => t.with_timezone(&Utc),
            Err(e) => {
                malformed(format!("timestamp `{}`: {e}", record.timestamp), &mut skipped)?;
                continue;
            }
        };
        if window.is_some_and(|w| !w.contains(timestamp)) {
            skipped.out_of_window += 1;
            continue;
        }
        if index.contains_key(&record.crash_id) {
            if options.strict {
                return Err(IngestError::DuplicateId {
                    crash_id: record.crash_id,
                    line: line_no,
                });
            }
            skipped.duplicate += 1;
            continue;
        }

        let trace = match traces.get(&record.stack_trace) {
            Some(cached) => cached.clone(),
            None => {
                let parsed = parse_stack_trace(&record.stack_trace).ok().map(Arc::new);
                traces.insert(record.stack_trace, parsed.clone());
                parsed
            }
        };
        let Some(trace) = trace else {
            malformed(
                format!("crash `{}`: stack trace has no frames", record.crash_id),
                &mut skipped,
            )?;
            continue;
        };

        index.insert(record.crash_id.clone(), reports.len());
        reports.push(CrashReport {
            crash_id: record.crash_id,
            timestamp,
            uri: record.uri,
            user: record.user,
            session_id: record.session_id,
            trace,
        });
    }

    let window = window.unwrap_or_else(|| span_of(&reports));
    Ok(CrashCorpus {
        reports,
        window,
        skipped,
        index,
    })
}
