//! The run ledger: one record per line, folded into a [`RunLedger`].
//!
//! Line format: `<ISO-8601 timestamp> <kind> key=value key=value ...`.
//! Values containing whitespace, `"` or `\` are written double-quoted with
//! backslash escapes.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use core::time::Duration;

use thiserror::Error;

use crate::checkpoint::CheckpointKind;
use crate::policy::Action;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EndReason {
    Completed,
    Evicted,
    Failed,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::Completed => "completed",
            EndReason::Evicted => "evicted",
            EndReason::Failed => "failed",
        }
    }
}

impl FromStr for EndReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "completed" => Ok(EndReason::Completed),
            "evicted" => Ok(EndReason::Evicted),
            "failed" => Ok(EndReason::Failed),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    Run,
    Resume,
}

/// One ledger line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerEvent {
    AttemptStart {
        attempt: u64,
        mode: StartMode,
        from_seq: Option<u64>,
        progress: u64,
    },
    AttemptEnd {
        attempt: u64,
        reason: EndReason,
        progress: u64,
    },
    Checkpoint {
        attempt: u64,
        seq: Option<u64>,
        kind: CheckpointKind,
        started: Timestamp,
        ok: bool,
        progress: u64,
        error: Option<String>,
    },
    Eviction {
        attempt: u64,
        event_id: String,
        deadline: Timestamp,
        action: Action,
        termination_ckpt_ok: bool,
        below_floor: bool,
        progress: u64,
    },
    Stage {
        attempt: u64,
        name: String,
        wall: Duration,
    },
    Fallback {
        attempt: u64,
        seq: u64,
        reason: String,
    },
    Done {
        attempt: u64,
        digest: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub at: Timestamp,
    pub event: LedgerEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerParseError {
    #[error("line {line}: bad timestamp")]
    Timestamp { line: usize },
    #[error("line {line}: unknown record kind `{kind}`")]
    Kind { line: usize, kind: String },
    #[error("line {line}: missing or bad field `{field}`")]
    Field { line: usize, field: &'static str },
    #[error("line {line}: unterminated quoted value")]
    Quote { line: usize },
}

fn needs_quoting(v: &str) -> bool {
    v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\')
}

fn write_value(out: &mut String, v: &str) {
    if !needs_quoting(v) {
        out.push_str(v);
        return;
    }
    out.push('"');
    for c in v.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn opt_seq(v: Option<u64>) -> String {
    v.map_or_else(|| "none".to_string(), |s| s.to_string())
}

impl LedgerRecord {
    pub fn new(at: Timestamp, event: LedgerEvent) -> Self {
        LedgerRecord { at, event }
    }

    pub fn to_line(&self) -> String {
        let mut fields: Vec<(&str, String)> = Vec::new();
        let kind = match &self.event {
            LedgerEvent::AttemptStart { attempt, mode, from_seq, progress } => {
                fields.push(("attempt", attempt.to_string()));
                fields.push(("mode", match mode { StartMode::Run => "run", StartMode::Resume => "resume" }.into()));
                fields.push(("from_seq", opt_seq(*from_seq)));
                fields.push(("progress", progress.to_string()));
                "attempt_start"
            }
            LedgerEvent::AttemptEnd { attempt, reason, progress } => {
                fields.push(("attempt", attempt.to_string()));
                fields.push(("reason", reason.as_str().into()));
                fields.push(("progress", progress.to_string()));
                "attempt_end"
            }
            LedgerEvent::Checkpoint { attempt, seq, kind, started, ok, progress, error } => {
                fields.push(("attempt", attempt.to_string()));
                fields.push(("seq", opt_seq(*seq)));
                fields.push(("kind", kind.as_str().into()));
                fields.push(("started", started.to_iso8601()));
                fields.push(("ok", ok.to_string()));
                fields.push(("progress", progress.to_string()));
                if let Some(e) = error {
                    fields.push(("error", e.clone()));
                }
                "checkpoint"
            }
            LedgerEvent::Eviction { attempt, event_id, deadline, action, termination_ckpt_ok, below_floor, progress } => {
                fields.push(("attempt", attempt.to_string()));
                fields.push(("event", event_id.clone()));
                fields.push(("deadline", deadline.to_iso8601()));
                fields.push(("action", action.as_str().into()));
                fields.push(("termination_ckpt_ok", termination_ckpt_ok.to_string()));
                fields.push(("below_floor", below_floor.to_string()));
                fields.push(("progress", progress.to_string()));
                "eviction"
            }
            LedgerEvent::Stage { attempt, name, wall } => {
                fields.push(("attempt", attempt.to_string()));
                fields.push(("name", name.clone()));
                fields.push(("wall_ms", wall.as_millis().to_string()));
                "stage"
            }
            LedgerEvent::Fallback { attempt, seq, reason } => {
                fields.push(("attempt", attempt.to_string()));
                fields.push(("seq", seq.to_string()));
                fields.push(("reason", reason.clone()));
                "fallback"
            }
            LedgerEvent::Done { attempt, digest } => {
                fields.push(("attempt", attempt.to_string()));
                fields.push(("digest", digest.clone()));
                "done"
            }
        };
        let mut line = format!("{} {}", self.at.to_iso8601(), kind);
        for (k, v) in fields {
            line.push(' ');
            line.push_str(k);
            line.push('=');
            write_value(&mut line, &v);
        }
        line
    }

    pub fn parse_line(text: &str, line: usize) -> Result<Self, LedgerParseError> {
        let text = text.trim();
        let (ts, rest) = text.split_once(' ').ok_or(LedgerParseError::Timestamp { line })?;
        let at = Timestamp::parse_iso8601(ts).ok_or(LedgerParseError::Timestamp { line })?;
        let rest = rest.trim_start();
        let (kind, rest) = rest.split_once(' ').unwrap_or((rest, ""));
        let fields = split_fields(rest).ok_or(LedgerParseError::Quote { line })?;
        let get = |name: &'static str| -> Result<&str, LedgerParseError> {
            fields
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.as_str())
                .ok_or(LedgerParseError::Field { line, field: name })
        };
        let parse = |name: &'static str| -> Result<u64, LedgerParseError> {
            get(name)?.parse().map_err(|_| LedgerParseError::Field { line, field: name })
        };
        let boolean = |name: &'static str| -> Result<bool, LedgerParseError> {
            get(name)?.parse().map_err(|_| LedgerParseError::Field { line, field: name })
        };
        let seq_opt = |name: &'static str| -> Result<Option<u64>, LedgerParseError> {
            match get(name)? {
                "none" => Ok(None),
                v => v.parse().map(Some).map_err(|_| LedgerParseError::Field { line, field: name }),
            }
        };
        let stamp = |name: &'static str| -> Result<Timestamp, LedgerParseError> {
            Timestamp::parse_iso8601(get(name)?).ok_or(LedgerParseError::Field { line, field: name })
        };
        let event = match kind {
            "attempt_start" => LedgerEvent::AttemptStart {
                attempt: parse("attempt")?,
                mode: match get("mode")? {
                    "run" => StartMode::Run,
                    "resume" => StartMode::Resume,
                    _ => return Err(LedgerParseError::Field { line, field: "mode" }),
                },
                from_seq: seq_opt("from_seq")?,
                progress: parse("progress")?,
            },
            "attempt_end" => LedgerEvent::AttemptEnd {
                attempt: parse("attempt")?,
                reason: get("reason")?.parse().map_err(|_| LedgerParseError::Field { line, field: "reason" })?,
                progress: parse("progress")?,
            },
            "checkpoint" => LedgerEvent::Checkpoint {
                attempt: parse("attempt")?,
                seq: seq_opt("seq")?,
                kind: get("kind")?.parse().map_err(|_| LedgerParseError::Field { line, field: "kind" })?,
                started: stamp("started")?,
                ok: boolean("ok")?,
                progress: parse("progress")?,
                error: get("error").ok().map(ToOwned::to_owned),
            },
            "eviction" => LedgerEvent::Eviction {
                attempt: parse("attempt")?,
                event_id: get("event")?.to_string(),
                deadline: stamp("deadline")?,
                action: match get("action")? {
                    "termination_checkpoint_then_stop" => Action::TerminationCheckpointThenStop,
                    "stop_without_checkpoint" => Action::StopWithoutCheckpoint,
                    "ignore" => Action::Ignore,
                    _ => return Err(LedgerParseError::Field { line, field: "action" }),
                },
                termination_ckpt_ok: boolean("termination_ckpt_ok")?,
                below_floor: boolean("below_floor")?,
                progress: parse("progress")?,
            },
            "stage" => LedgerEvent::Stage {
                attempt: parse("attempt")?,
                name: get("name")?.to_string(),
                wall: Duration::from_millis(parse("wall_ms")?),
            },
            "fallback" => LedgerEvent::Fallback {
                attempt: parse("attempt")?,
                seq: parse("seq")?,
                reason: get("reason")?.to_string(),
            },
            "done" => LedgerEvent::Done { attempt: parse("attempt")?, digest: get("digest")?.to_string() },
            other => return Err(LedgerParseError::Kind { line, kind: other.to_string() }),
        };
        Ok(LedgerRecord { at, event })
    }
}

fn split_fields(text: &str) -> Option<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Some(out);
        }
        let mut key = String::new();
        for c in chars.by_ref() {
            if c == '=' {
                break;
            }
            key.push(c);
        }
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            loop {
                match chars.next()? {
                    '"' => break,
                    '\\' => match chars.next()? {
                        'n' => value.push('\n'),
                        c => value.push(c),
                    },
                    c => value.push(c),
                }
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        out.push((key, value));
    }
}

impl fmt::Display for LedgerRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptRecord {
    pub attempt_id: u64,
    pub start: Timestamp,
    pub end: Timestamp,
    /// Attempts with no end record were killed: they count as evicted.
    pub end_reason: EndReason,
    pub resumed_from: Option<u64>,
    pub start_progress: u64,
    /// Last progress the ledger saw for this attempt.
    pub end_progress: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointRecord {
    pub attempt_id: u64,
    pub sequence: Option<u64>,
    pub kind: CheckpointKind,
    pub started: Timestamp,
    pub finished: Timestamp,
    pub ok: bool,
    pub progress: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictionRecord {
    pub attempt_id: u64,
    pub event_id: String,
    pub notice_time: Timestamp,
    pub deadline: Timestamp,
    pub action: Action,
    pub termination_ckpt_ok: bool,
    pub below_floor: bool,
    pub progress: u64,
}

/// Everything the ledger records about a run, across attempts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunLedger {
    pub attempts: Vec<AttemptRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub evictions: Vec<EvictionRecord>,
    /// Summed over attempts, in first-seen order.
    pub stage_times: Vec<(String, Duration)>,
    pub fallbacks: Vec<(u64, String)>,
    pub digest: Option<String>,
}

impl RunLedger {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a LedgerRecord>) -> Self {
        let mut ledger = RunLedger::default();
        for r in records {
            ledger.apply(r);
        }
        ledger
    }

    fn touch(&mut self, attempt: u64, at: Timestamp, progress: Option<u64>) {
        if let Some(a) = self.attempts.iter_mut().rev().find(|a| a.attempt_id == attempt) {
            if at > a.end {
                a.end = at;
            }
            if let Some(p) = progress {
                a.end_progress = p;
            }
        }
    }

    pub fn apply(&mut self, record: &LedgerRecord) {
        let at = record.at;
        match &record.event {
            LedgerEvent::AttemptStart { attempt, from_seq, progress, .. } => {
                self.attempts.push(AttemptRecord {
                    attempt_id: *attempt,
                    start: at,
                    end: at,
                    end_reason: EndReason::Evicted,
                    resumed_from: *from_seq,
                    start_progress: *progress,
                    end_progress: *progress,
                });
            }
            LedgerEvent::AttemptEnd { attempt, reason, progress } => {
                self.touch(*attempt, at, Some(*progress));
                if let Some(a) = self.attempts.iter_mut().rev().find(|a| a.attempt_id == *attempt) {
                    a.end_reason = *reason;
                }
            }
            LedgerEvent::Checkpoint { attempt, seq, kind, started, ok, progress, .. } => {
                self.touch(*attempt, at, None);
                self.checkpoints.push(CheckpointRecord {
                    attempt_id: *attempt,
                    sequence: *seq,
                    kind: *kind,
                    started: *started,
                    finished: at,
                    ok: *ok,
                    progress: *progress,
                });
            }
            LedgerEvent::Eviction { attempt, event_id, deadline, action, termination_ckpt_ok, below_floor, progress } => {
                self.touch(*attempt, at, Some(*progress));
                self.evictions.push(EvictionRecord {
                    attempt_id: *attempt,
                    event_id: event_id.clone(),
                    notice_time: at,
                    deadline: *deadline,
                    action: *action,
                    termination_ckpt_ok: *termination_ckpt_ok,
                    below_floor: *below_floor,
                    progress: *progress,
                });
            }
            LedgerEvent::Stage { attempt, name, wall } => {
                self.touch(*attempt, at, None);
                match self.stage_times.iter_mut().find(|(n, _)| n == name) {
                    Some((_, total)) => *total += *wall,
                    None => self.stage_times.push((name.clone(), *wall)),
                }
            }
            LedgerEvent::Fallback { attempt, seq, reason } => {
                self.touch(*attempt, at, None);
                self.fallbacks.push((*seq, reason.clone()));
            }
            LedgerEvent::Done { attempt, digest } => {
                self.touch(*attempt, at, None);
                self.digest = Some(digest.clone());
            }
        }
    }

    pub fn next_attempt_id(&self) -> u64 {
        self.attempts.iter().map(|a| a.attempt_id).max().unwrap_or(0) + 1
    }

    /// First start to last end across all attempts.
    pub fn makespan(&self) -> Duration {
        match (self.attempts.first(), self.attempts.iter().map(|a| a.end).max()) {
            (Some(first), Some(last)) => last.saturating_since(first.start),
            _ => Duration::ZERO,
        }
    }

    pub fn completed(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.end_reason == EndReason::Completed)
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for pair in self.attempts.windows(2) {
            if pair[0].end > pair[1].start {
                return Err(format!("attempts {} and {} overlap", pair[0].attempt_id, pair[1].attempt_id));
            }
        }
        let mut last_seq = 0;
        for c in &self.checkpoints {
            if let Some(s) = c.sequence {
                if s <= last_seq {
                    return Err(format!("checkpoint sequence {s} not above {last_seq}"));
                }
                last_seq = s;
            }
        }
        for (i, e) in self.evictions.iter().enumerate() {
            let until = self.evictions.get(i + 1).map(|n| n.notice_time);
            let started = self
                .attempts
                .iter()
                .filter(|a| a.start >= e.notice_time && until.is_none_or(|u| a.start < u))
                .count();
            if started > 1 {
                return Err(format!("eviction {} followed by {started} attempts", e.event_id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(s: i64) -> Timestamp {
        Timestamp::from_secs(1_792_312_200 + s)
    }

    fn sample() -> Vec<LedgerRecord> {
        vec![
            LedgerRecord::new(t(0), LedgerEvent::AttemptStart { attempt: 1, mode: StartMode::Run, from_seq: None, progress: 0 }),
            LedgerRecord::new(t(5), LedgerEvent::Checkpoint {
                attempt: 1, seq: Some(1), kind: CheckpointKind::Periodic, started: t(4), ok: true, progress: 40, error: None,
            }),
            LedgerRecord::new(t(6), LedgerEvent::Checkpoint {
                attempt: 1, seq: None, kind: CheckpointKind::Periodic, started: t(6), ok: false, progress: 50,
                error: Some("snapshot command exited with status 1".into()),
            }),
            LedgerRecord::new(t(7), LedgerEvent::Stage { attempt: 1, name: "K33".into(), wall: Duration::from_millis(7000) }),
            LedgerRecord::new(t(8), LedgerEvent::Eviction {
                attempt: 1, event_id: "E 1".into(), deadline: t(38), action: Action::TerminationCheckpointThenStop,
                termination_ckpt_ok: true, below_floor: false, progress: 80,
            }),
            LedgerRecord::new(t(9), LedgerEvent::AttemptEnd { attempt: 1, reason: EndReason::Evicted, progress: 80 }),
            LedgerRecord::new(t(40), LedgerEvent::AttemptStart { attempt: 2, mode: StartMode::Resume, from_seq: Some(2), progress: 80 }),
            LedgerRecord::new(t(41), LedgerEvent::Fallback { attempt: 2, seq: 3, reason: "checksum \"bad\"".into() }),
            LedgerRecord::new(t(45), LedgerEvent::Stage { attempt: 2, name: "K33".into(), wall: Duration::from_millis(500) }),
            LedgerRecord::new(t(50), LedgerEvent::Done { attempt: 2, digest: "00ff".into() }),
            LedgerRecord::new(t(50), LedgerEvent::AttemptEnd { attempt: 2, reason: EndReason::Completed, progress: 100 }),
        ]
    }

    #[test]
    fn lines_round_trip() {
        for (i, r) in sample().iter().enumerate() {
            let line = r.to_line();
            assert_eq!(LedgerRecord::parse_line(&line, i + 1).as_ref(), Ok(r), "{line}");
        }
    }

    #[test]
    fn quoting() {
        let r = &sample()[7];
        assert!(r.to_line().ends_with(r#"reason="checksum \"bad\"""#), "{}", r.to_line());
    }

    #[test]
    fn fold_builds_ledger() {
        let records = sample();
        let ledger = RunLedger::from_records(&records);
        assert_eq!(ledger.attempts.len(), 2);
        assert_eq!(ledger.attempts[0].end_reason, EndReason::Evicted);
        assert_eq!(ledger.attempts[1].end_reason, EndReason::Completed);
        assert_eq!(ledger.attempts[1].resumed_from, Some(2));
        assert_eq!(ledger.checkpoints.len(), 2);
        assert!(!ledger.checkpoints[1].ok);
        assert_eq!(ledger.evictions.len(), 1);
        assert!(ledger.evictions[0].termination_ckpt_ok);
        assert_eq!(ledger.stage_times, vec![("K33".into(), Duration::from_millis(7500))]);
        assert_eq!(ledger.digest.as_deref(), Some("00ff"));
        assert_eq!(ledger.makespan(), Duration::from_secs(50));
        assert!(ledger.completed());
        assert_eq!(ledger.next_attempt_id(), 3);
        assert_eq!(ledger.check_invariants(), Ok(()));
    }

    #[test]
    fn killed_attempt_counts_as_evicted() {
        let records = vec![
            LedgerRecord::new(t(0), LedgerEvent::AttemptStart { attempt: 1, mode: StartMode::Run, from_seq: None, progress: 0 }),
            LedgerRecord::new(t(3), LedgerEvent::Stage { attempt: 1, name: "A".into(), wall: Duration::from_secs(3) }),
        ];
        let ledger = RunLedger::from_records(&records);
        assert_eq!(ledger.attempts[0].end_reason, EndReason::Evicted);
        assert_eq!(ledger.attempts[0].end, t(3));
        assert!(!ledger.completed());
    }

    #[test]
    fn invariant_violations_are_reported() {
        let mut records = sample();
        records.push(LedgerRecord::new(t(60), LedgerEvent::Checkpoint {
            attempt: 2, seq: Some(1), kind: CheckpointKind::Periodic, started: t(59), ok: true, progress: 1, error: None,
        }));
        assert!(RunLedger::from_records(&records).check_invariants().unwrap_err().contains("sequence"));

        let mut records = sample();
        records.push(LedgerRecord::new(t(45), LedgerEvent::AttemptStart { attempt: 3, mode: StartMode::Resume, from_seq: None, progress: 0 }));
        assert!(RunLedger::from_records(&records).check_invariants().is_err());
    }

    #[test]
    fn parse_errors() {
        assert_eq!(LedgerRecord::parse_line("garbage", 3), Err(LedgerParseError::Timestamp { line: 3 }));
        let line = format!("{} teleport x=1", t(0).to_iso8601());
        assert!(matches!(LedgerRecord::parse_line(&line, 1), Err(LedgerParseError::Kind { .. })));
        let line = format!("{} done attempt=1", t(0).to_iso8601());
        assert_eq!(LedgerRecord::parse_line(&line, 1), Err(LedgerParseError::Field { line: 1, field: "digest" }));
        let line = format!("{} done attempt=1 digest=\"abc", t(0).to_iso8601());
        assert_eq!(LedgerRecord::parse_line(&line, 1), Err(LedgerParseError::Quote { line: 1 }));
    }
}
