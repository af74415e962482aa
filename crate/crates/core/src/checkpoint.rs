//! Checkpoint manifests, the payload digest, and the in-process checkpointers.
//!
//! A manifest is a line-oriented `key = value` text file:
//!
//! ```text
//! sequence = 5
//! kind = termination
//! attempt_id = 3
//! progress_marker = K77:120
//! payload_size = 46
//! checksum = 9f1c0c4e5d2a7b31
//! complete = true
//! created_at = 2026-10-18T09:30:00.250Z
//! ```
//!
//! `checksum` is FNV-1a (64-bit) over the payload bytes, in 16 lowercase hex
//! digits. It detects corruption; it is not a security boundary.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::hash::Hasher;
use core::str::FromStr;
use core::time::Duration;

use thiserror::Error;

use crate::time::Timestamp;
use crate::workload::{WorkloadError, WorkloadSpec, WorkloadState};

/// FNV-1a 64 over `payload`.
pub fn checksum(payload: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(payload);
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckpointKind {
    Periodic,
    Termination,
}

impl CheckpointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Periodic => "periodic",
            CheckpointKind::Termination => "termination",
        }
    }
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckpointKind {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "periodic" => Ok(CheckpointKind::Periodic),
            "termination" => Ok(CheckpointKind::Termination),
            other => Err(ManifestError::BadValue { key: "kind", value: other.to_string() }),
        }
    }
}

/// Where in the workload a checkpoint was taken.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProgressMarker {
    pub stage: String,
    pub step: u64,
}

impl ProgressMarker {
    pub fn of(state: &WorkloadState, spec: &WorkloadSpec) -> Self {
        ProgressMarker {
            stage: state.stage_name(spec).unwrap_or("-").to_string(),
            step: state.step_index,
        }
    }
}

impl fmt::Display for ProgressMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.stage, self.step)
    }
}

impl FromStr for ProgressMarker {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ManifestError::BadValue { key: "progress_marker", value: s.to_string() };
        let (stage, step) = s.rsplit_once(':').ok_or_else(bad)?;
        let step = step.parse().map_err(|_| bad())?;
        Ok(ProgressMarker { stage: stage.to_string(), step })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown manifest key `{0}`")]
    UnknownKey(String),
    #[error("duplicate manifest key `{0}`")]
    DuplicateKey(String),
    #[error("missing manifest key `{0}`")]
    MissingKey(&'static str),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: &'static str, value: String },
}

/// Durable description of one checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointManifest {
    pub sequence: u64,
    pub kind: CheckpointKind,
    pub attempt_id: u64,
    pub progress_marker: ProgressMarker,
    pub payload_size: u64,
    pub checksum: u64,
    /// Whether the commit marker exists. The store sets this when reading.
    pub complete: bool,
    pub created_at: Timestamp,
}

const MANIFEST_KEYS: [&str; 8] = [
    "sequence",
    "kind",
    "attempt_id",
    "progress_marker",
    "payload_size",
    "checksum",
    "complete",
    "created_at",
];

impl CheckpointManifest {
    pub fn to_text(&self) -> String {
        format!(
            "sequence = {}\nkind = {}\nattempt_id = {}\nprogress_marker = {}\npayload_size = {}\nchecksum = {:016x}\ncomplete = {}\ncreated_at = {}\n",
            self.sequence,
            self.kind,
            self.attempt_id,
            self.progress_marker,
            self.payload_size,
            self.checksum,
            self.complete,
            self.created_at.to_iso8601(),
        )
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut values: [Option<&str>; 8] = [None; 8];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ManifestError::Syntax { line: n + 1 })?;
            let key = key.trim();
            let idx = MANIFEST_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| ManifestError::UnknownKey(key.to_string()))?;
            if values[idx].replace(value.trim()).is_some() {
                return Err(ManifestError::DuplicateKey(key.to_string()));
            }
        }
        let get = |i: usize| values[i].ok_or(ManifestError::MissingKey(MANIFEST_KEYS[i]));
        let num = |i: usize| -> Result<u64, ManifestError> {
            let v = get(i)?;
            v.parse().map_err(|_| ManifestError::BadValue { key: MANIFEST_KEYS[i], value: v.to_string() })
        };
        let sequence = num(0)?;
        if sequence == 0 {
            return Err(ManifestError::BadValue { key: "sequence", value: "0".into() });
        }
        let checksum_text = get(5)?;
        let checksum = u64::from_str_radix(checksum_text, 16)
            .map_err(|_| ManifestError::BadValue { key: "checksum", value: checksum_text.to_string() })?;
        let complete = match get(6)? {
            "true" => true,
            "false" => false,
            other => return Err(ManifestError::BadValue { key: "complete", value: other.to_string() }),
        };
        let created_text = get(7)?;
        let created_at = Timestamp::parse_iso8601(created_text)
            .ok_or_else(|| ManifestError::BadValue { key: "created_at", value: created_text.to_string() })?;
        Ok(CheckpointManifest {
            sequence,
            kind: get(1)?.parse()?,
            attempt_id: num(2)?,
            progress_marker: get(3)?.parse()?,
            payload_size: num(4)?,
            checksum,
            complete,
            created_at,
        })
    }
}

/// Which checkpointing mechanism a coordinator drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckpointerKind {
    /// The workload's own save points; only at stage boundaries.
    Application,
    /// An external process-snapshot command (CRIU-style).
    Transparent,
    /// Built-in full-state snapshot, available at every step.
    Toy,
}

impl CheckpointerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckpointerKind::Application => "application",
            CheckpointerKind::Transparent => "transparent",
            CheckpointerKind::Toy => "toy",
        }
    }

    /// Whether a snapshot can be taken at an arbitrary step.
    pub fn on_demand(self) -> bool {
        !matches!(self, CheckpointerKind::Application)
    }
}

impl fmt::Display for CheckpointerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckpointerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "application" => Ok(CheckpointerKind::Application),
            "transparent" => Ok(CheckpointerKind::Transparent),
            "toy" => Ok(CheckpointerKind::Toy),
            other => Err(format!("unknown checkpointer `{other}` (application|transparent|toy)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("not at a safe point (stage {stage_index}, step {step_index})")]
    NotAtSafePoint { stage_index: usize, step_index: u64 },
    #[error(transparent)]
    Payload(#[from] WorkloadError),
}

/// A mechanism that turns workload state into a payload and back.
pub trait Checkpointer {
    fn kind(&self) -> CheckpointerKind;
    fn can_checkpoint_now(&self, state: &WorkloadState) -> bool;
    fn snapshot(&self, state: &WorkloadState) -> Result<Vec<u8>, CheckpointError>;
    fn restore(&self, payload: &[u8]) -> Result<WorkloadState, CheckpointError>;
    /// Expected wall time of one snapshot.
    fn estimate(&self) -> Duration;
}

/// Full-state snapshots at any step.
#[derive(Debug, Clone)]
pub struct ToyCheckpointer {
    spec: WorkloadSpec,
    estimate: Duration,
}

impl ToyCheckpointer {
    pub fn new(spec: WorkloadSpec, estimate: Duration) -> Self {
        ToyCheckpointer { spec, estimate }
    }
}

impl Checkpointer for ToyCheckpointer {
    fn kind(&self) -> CheckpointerKind {
        CheckpointerKind::Toy
    }

    fn can_checkpoint_now(&self, _state: &WorkloadState) -> bool {
        true
    }

    fn snapshot(&self, state: &WorkloadState) -> Result<Vec<u8>, CheckpointError> {
        Ok(state.serialize(&self.spec))
    }

    fn restore(&self, payload: &[u8]) -> Result<WorkloadState, CheckpointError> {
        Ok(WorkloadState::deserialize(payload, &self.spec)?)
    }

    fn estimate(&self) -> Duration {
        self.estimate
    }
}

/// Native checkpoints: the same payload, but refused between stage boundaries.
#[derive(Debug, Clone)]
pub struct ApplicationCheckpointer {
    spec: WorkloadSpec,
    estimate: Duration,
}

impl ApplicationCheckpointer {
    pub fn new(spec: WorkloadSpec, estimate: Duration) -> Self {
        ApplicationCheckpointer { spec, estimate }
    }
}

impl Checkpointer for ApplicationCheckpointer {
    fn kind(&self) -> CheckpointerKind {
        CheckpointerKind::Application
    }

    fn can_checkpoint_now(&self, state: &WorkloadState) -> bool {
        state.at_stage_boundary(&self.spec)
    }

    fn snapshot(&self, state: &WorkloadState) -> Result<Vec<u8>, CheckpointError> {
        if !self.can_checkpoint_now(state) {
            return Err(CheckpointError::NotAtSafePoint {
                stage_index: state.stage_index,
                step_index: state.step_index,
            });
        }
        Ok(state.serialize(&self.spec))
    }

    fn restore(&self, payload: &[u8]) -> Result<WorkloadState, CheckpointError> {
        let state = WorkloadState::deserialize(payload, &self.spec)?;
        if !state.at_stage_boundary(&self.spec) {
            return Err(CheckpointError::NotAtSafePoint {
                stage_index: state.stage_index,
                step_index: state.step_index,
            });
        }
        Ok(state)
    }

    fn estimate(&self) -> Duration {
        self.estimate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> CheckpointManifest {
        CheckpointManifest {
            sequence: 5,
            kind: CheckpointKind::Termination,
            attempt_id: 3,
            progress_marker: ProgressMarker { stage: "K77".into(), step: 120 },
            payload_size: 46,
            checksum: 0x9f1c_0c4e_5d2a_7b31,
            complete: true,
            created_at: Timestamp::from_millis(1_792_312_200_250),
        }
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = manifest();
        let text = m.to_text();
        assert!(text.contains("checksum = 9f1c0c4e5d2a7b31\n"));
        assert!(text.contains("progress_marker = K77:120\n"));
        assert_eq!(CheckpointManifest::parse(&text), Ok(m));
    }

    #[test]
    fn manifest_rejects_garbage() {
        let text = manifest().to_text();
        assert_eq!(
            CheckpointManifest::parse(&text.replace("kind = termination\n", "")),
            Err(ManifestError::MissingKey("kind"))
        );
        assert!(matches!(
            CheckpointManifest::parse(&(text.clone() + "colour = red\n")),
            Err(ManifestError::UnknownKey(_))
        ));
        assert!(matches!(
            CheckpointManifest::parse(&(text.clone() + "sequence = 6\n")),
            Err(ManifestError::DuplicateKey(_))
        ));
        assert_eq!(CheckpointManifest::parse("nonsense"), Err(ManifestError::Syntax { line: 1 }));
        assert!(CheckpointManifest::parse(&text.replace("sequence = 5", "sequence = 0")).is_err());
        assert!(CheckpointManifest::parse(&text.replace("= termination", "= sometimes")).is_err());
    }

    #[test]
    fn stage_names_with_colons_survive() {
        let marker: ProgressMarker = "a:b:7".parse().unwrap();
        assert_eq!(marker, ProgressMarker { stage: "a:b".into(), step: 7 });
    }

    #[test]
    fn checksum_is_fnv1a() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(checksum(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(checksum(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(checksum(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn application_checkpointer_only_at_boundaries() {
        let spec = WorkloadSpec::uniform_default(1000, 1);
        let app = ApplicationCheckpointer::new(spec.clone(), Duration::from_secs(1));
        let toy = ToyCheckpointer::new(spec.clone(), Duration::from_secs(1));
        let mid = spec.state_at(1500);
        let boundary = spec.state_at(2000);
        assert!(!app.can_checkpoint_now(&mid));
        assert!(app.can_checkpoint_now(&boundary));
        assert!(toy.can_checkpoint_now(&mid));
        assert!(matches!(app.snapshot(&mid), Err(CheckpointError::NotAtSafePoint { .. })));
        let payload = app.snapshot(&boundary).unwrap();
        assert_eq!(app.restore(&payload).unwrap(), boundary);
        let mid_payload = toy.snapshot(&mid).unwrap();
        assert_eq!(toy.restore(&mid_payload).unwrap(), mid);
        assert!(app.restore(&mid_payload).is_err());
    }
}
