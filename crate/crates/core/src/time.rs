//! Wall-clock timestamps and the text formats they travel in.
//!
//! Timestamps are milliseconds since the Unix epoch. Two renderings are
//! supported: ISO-8601 (ledger records, manifests) and RFC-1123 (the
//! `NotBefore` field of the metadata service).

use alloc::string::String;
use core::fmt;
use core::ops::{Add, Sub};
use core::time::Duration;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};

const RFC1123_FORMAT: &str = "%a, %d %b %Y %H:%M:%S";

/// Milliseconds since the Unix epoch (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const EPOCH: Timestamp = Timestamp(0);

    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn from_secs(s: i64) -> Self {
        Timestamp(s * 1000)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    /// `self - earlier`, clamped at zero.
    pub fn saturating_since(self, earlier: Timestamp) -> Duration {
        if self.0 <= earlier.0 {
            Duration::ZERO
        } else {
            Duration::from_millis((self.0 - earlier.0) as u64)
        }
    }

    /// Rounds up to the next whole second (identity on whole seconds).
    pub fn ceil_to_second(self) -> Timestamp {
        Timestamp(self.0.div_euclid(1000) * 1000 + if self.0.rem_euclid(1000) == 0 { 0 } else { 1000 })
    }

    fn to_chrono(self) -> Option<DateTime<Utc>> {
        DateTime::from_timestamp_millis(self.0)
    }

    /// `2026-10-18T09:30:00.250Z`
    pub fn to_iso8601(self) -> String {
        match self.to_chrono() {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Millis, true),
            None => alloc::format!("@{}", self.0),
        }
    }

    pub fn parse_iso8601(text: &str) -> Option<Timestamp> {
        DateTime::parse_from_rfc3339(text.trim())
            .ok()
            .map(|dt| Timestamp(dt.timestamp_millis()))
    }

    /// `Mon, 19 Sep 2016 18:29:47 GMT` (sub-second precision is dropped).
    pub fn to_rfc1123(self) -> String {
        match self.to_chrono() {
            Some(dt) => alloc::format!("{} GMT", dt.format(RFC1123_FORMAT)),
            None => String::new(),
        }
    }

    /// Parses RFC-1123 date text. A trailing `GMT` or `UTC` zone name is
    /// accepted (and so is none at all); numeric offsets are not.
    pub fn parse_rfc1123(text: &str) -> Option<Timestamp> {
        let trimmed = text.trim();
        let body = trimmed
            .strip_suffix("GMT")
            .or_else(|| trimmed.strip_suffix("UTC"))
            .unwrap_or(trimmed)
            .trim_end();
        NaiveDateTime::parse_from_str(body, RFC1123_FORMAT)
            .ok()
            .map(|naive| Timestamp(naive.and_utc().timestamp_millis()))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(rhs.as_millis() as i64))
    }
}

impl Sub<Duration> for Timestamp {
    type Output = Timestamp;

    fn sub(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_sub(rhs.as_millis() as i64))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

/// Formats a duration as `H:MM:SS` (whole seconds, truncated).
pub fn format_hms(d: Duration) -> String {
    let s = d.as_secs();
    alloc::format!("{}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

/// Parses `SS`, `MM:SS` or `H:MM:SS` into a duration.
pub fn parse_hms(text: &str) -> Option<Duration> {
    let mut total: u64 = 0;
    let mut parts = 0;
    for part in text.trim().split(':') {
        let v: u64 = part.trim().parse().ok()?;
        total = total.checked_mul(60)?.checked_add(v)?;
        parts += 1;
    }
    if parts == 0 || parts > 3 {
        return None;
    }
    Some(Duration::from_secs(total))
}
