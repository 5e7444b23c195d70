use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

/// Half-open time interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn duration(&self) -> Duration {
        self.end - self.start
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", format_instant(self.start), format_instant(self.end))
    }
}

/// Accepts `<start>..<end>` where each side is RFC 3339 or a bare
/// `YYYY-MM-DD` date (midnight UTC).
impl FromStr for TimeWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (start, end) = s
            .split_once("..")
            .ok_or_else(|| format!("window `{s}` is not of the form <start>..<end>"))?;
        let window = Self::new(parse_instant(start)?, parse_instant(end)?);
        if window.is_empty() {
            return Err(format!("window `{s}` is empty"));
        }
        Ok(window)
    }
}

pub fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc())
        .map_err(|_| format!("`{s}` is neither RFC 3339 nor YYYY-MM-DD"))
}

pub fn format_instant(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Splits `span` into consecutive Monday-aligned weeks (00:00 UTC). The
/// first and last windows are clipped to the span.
pub fn weekly_windows(span: &TimeWindow) -> Vec<TimeWindow> {
    if span.is_empty() {
        return Vec::new();
    }
    let first_day = span.start.date_naive();
    let monday = first_day - Duration::days(i64::from(first_day.weekday().num_days_from_monday()));
    let mut boundary = monday.and_hms_opt(0, 0, 0).unwrap().and_utc();
    let mut out = Vec::new();
    while boundary < span.end {
        let next = boundary + Duration::weeks(1);
        out.push(TimeWindow::new(boundary.max(span.start), next.min(span.end)));
        boundary = next;
    }
    out
}
