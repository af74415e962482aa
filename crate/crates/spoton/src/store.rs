//! The shared checkpoint store.
//!
//! Layout under the store root:
//!
//! ```text
//! ckpt/<seq>/payload.bin
//! ckpt/<seq>/manifest
//! ckpt/<seq>/COMMIT
//! ledger/ledger.log
//! scratch/
//! ```
//!
//! A checkpoint is visible only once `COMMIT` exists, and `COMMIT` is created
//! only after the payload and manifest are durable.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use spoton_core::checkpoint::{checksum, CheckpointKind, CheckpointManifest, ProgressMarker};
use thiserror::Error;
use tracing::warn;

use crate::clock::now;

pub const PAYLOAD_FILE: &str = "payload.bin";
pub const MANIFEST_FILE: &str = "manifest";
pub const COMMIT_FILE: &str = "COMMIT";

/// Valid checkpoints kept after each commit.
pub const RETAIN: usize = 2;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("checkpoint store {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("injected crash after step {0:?}")]
    InjectedCrash(WriteStep),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// The ordered steps of `write_checkpoint`. A crash is injected right after
/// the named step has happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteStep {
    CreateDir,
    /// Half of the payload has reached the file.
    PayloadPartial,
    PayloadWritten,
    PayloadSynced,
    ManifestTempWritten,
    ManifestRenamed,
    DirSynced,
    CommitCreated,
    CommitSynced,
    Retention,
}

impl WriteStep {
    pub const ALL: [WriteStep; 10] = [
        WriteStep::CreateDir,
        WriteStep::PayloadPartial,
        WriteStep::PayloadWritten,
        WriteStep::PayloadSynced,
        WriteStep::ManifestTempWritten,
        WriteStep::ManifestRenamed,
        WriteStep::DirSynced,
        WriteStep::CommitCreated,
        WriteStep::CommitSynced,
        WriteStep::Retention,
    ];
}

/// What the writer knows about a checkpoint besides its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub attempt_id: u64,
    pub progress_marker: ProgressMarker,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn sync_dir(path: &Path) -> io::Result<()> {
    File::open(path)?.sync_all()
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let store = Store { root: root.into() };
        for dir in [store.ckpt_root(), store.ledger_dir(), store.scratch_dir()] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ckpt_root(&self) -> PathBuf {
        self.root.join("ckpt")
    }

    pub fn ledger_dir(&self) -> PathBuf {
        self.root.join("ledger")
    }

    pub fn scratch_dir(&self) -> PathBuf {
        self.root.join("scratch")
    }

    pub fn checkpoint_dir(&self, seq: u64) -> PathBuf {
        self.ckpt_root().join(seq.to_string())
    }

    /// Sequence numbers of every checkpoint directory, complete or not,
    /// ascending. Names that are not plain positive integers are ignored.
    pub fn sequences(&self) -> Vec<u64> {
        let mut seqs: Vec<u64> = match fs::read_dir(self.ckpt_root()) {
            Ok(entries) => entries
                .filter_map(Result::ok)
                .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
                .filter_map(|e| {
                    let name = e.file_name().into_string().ok()?;
                    if name.is_empty() || !name.bytes().all(|b| b.is_ascii_digit()) || name.starts_with('0') {
                        return None;
                    }
                    name.parse().ok()
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        seqs.sort_unstable();
        seqs
    }

    /// Never reuses a number, even one left behind by a torn write.
    pub fn next_sequence(&self) -> u64 {
        self.sequences().last().map_or(1, |s| s + 1)
    }

    pub fn write_checkpoint(&self, payload: &[u8], meta: &CheckpointMeta) -> Result<CheckpointManifest, StoreError> {
        self.write_checkpoint_with_crash(payload, meta, None)
    }

    /// `write_checkpoint`, abandoning the write right after `crash_after`.
    pub fn write_checkpoint_with_crash(
        &self,
        payload: &[u8],
        meta: &CheckpointMeta,
        crash_after: Option<WriteStep>,
    ) -> Result<CheckpointManifest, StoreError> {
        let crash = |step: WriteStep| -> Result<(), StoreError> {
            if crash_after == Some(step) {
                Err(StoreError::InjectedCrash(step))
            } else {
                Ok(())
            }
        };

        let seq = self.next_sequence();
        let dir = self.checkpoint_dir(seq);
        fs::create_dir(&dir).map_err(io_err(&dir))?;
        crash(WriteStep::CreateDir)?;

        let payload_path = dir.join(PAYLOAD_FILE);
        let mut file = File::create(&payload_path).map_err(io_err(&payload_path))?;
        let half = payload.len() / 2;
        file.write_all(&payload[..half]).map_err(io_err(&payload_path))?;
        crash(WriteStep::PayloadPartial)?;
        file.write_all(&payload[half..]).map_err(io_err(&payload_path))?;
        crash(WriteStep::PayloadWritten)?;
        file.sync_all().map_err(io_err(&payload_path))?;
        drop(file);
        crash(WriteStep::PayloadSynced)?;

        let manifest = CheckpointManifest {
            sequence: seq,
            kind: meta.kind,
            attempt_id: meta.attempt_id,
            progress_marker: meta.progress_marker.clone(),
            payload_size: payload.len() as u64,
            checksum: checksum(payload),
            complete: true,
            created_at: now(),
        };
        let tmp = dir.join("manifest.tmp");
        let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(manifest.to_text().as_bytes()).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        drop(file);
        crash(WriteStep::ManifestTempWritten)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &manifest_path).map_err(io_err(&manifest_path))?;
        crash(WriteStep::ManifestRenamed)?;
        sync_dir(&dir).map_err(io_err(&dir))?;
        crash(WriteStep::DirSynced)?;

        let commit = dir.join(COMMIT_FILE);
        let file = OpenOptions::new().write(true).create_new(true).open(&commit).map_err(io_err(&commit))?;
        crash(WriteStep::CommitCreated)?;
        file.sync_all().map_err(io_err(&commit))?;
        sync_dir(&dir).map_err(io_err(&dir))?;
        crash(WriteStep::CommitSynced)?;

        self.apply_retention();
        crash(WriteStep::Retention)?;
        Ok(manifest)
    }

    /// Reads the manifest of `seq`. `complete` reflects the commit marker.
    pub fn read_manifest(&self, seq: u64) -> Option<CheckpointManifest> {
        let dir = self.checkpoint_dir(seq);
        let path = dir.join(MANIFEST_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return None,
            Err(e) => {
                warn!(path = %path.display(), error = %e, "unreadable manifest skipped");
                return None;
            }
        };
        match CheckpointManifest::parse(&text) {
            Ok(mut m) if m.sequence == seq => {
                m.complete = m.complete && dir.join(COMMIT_FILE).is_file();
                Some(m)
            }
            Ok(m) => {
                warn!(path = %path.display(), sequence = m.sequence, "manifest sequence does not match its directory");
                None
            }
            Err(e) => {
                warn!(path = %path.display(), error = %e, "malformed manifest skipped");
                None
            }
        }
    }

    /// Commit marker present, payload present with the recorded size and checksum.
    pub fn validate(&self, manifest: &CheckpointManifest) -> bool {
        let dir = self.checkpoint_dir(manifest.sequence);
        if !manifest.complete || !dir.join(COMMIT_FILE).is_file() {
            return false;
        }
        match fs::read(dir.join(PAYLOAD_FILE)) {
            Ok(bytes) => bytes.len() as u64 == manifest.payload_size && checksum(&bytes) == manifest.checksum,
            Err(_) => false,
        }
    }

    /// Valid checkpoints, newest first.
    pub fn valid_checkpoints(&self) -> Vec<CheckpointManifest> {
        self.sequences()
            .into_iter()
            .rev()
            .filter_map(|seq| self.read_manifest(seq))
            .filter(|m| self.validate(m))
            .collect()
    }

    pub fn latest_valid(&self) -> Option<CheckpointManifest> {
        self.sequences()
            .into_iter()
            .rev()
            .filter_map(|seq| self.read_manifest(seq))
            .find(|m| self.validate(m))
    }

    pub fn read_payload(&self, manifest: &CheckpointManifest) -> Result<Vec<u8>, StoreError> {
        let path = self.checkpoint_dir(manifest.sequence).join(PAYLOAD_FILE);
        fs::read(&path).map_err(io_err(&path))
    }

    /// Deletes every checkpoint directory older than the oldest of the
    /// newest `RETAIN` valid ones.
    fn apply_retention(&self) {
        let keep = self.valid_checkpoints();
        let Some(oldest_kept) = keep.get(RETAIN - 1).map(|m| m.sequence) else {
            return;
        };
        for seq in self.sequences().into_iter().filter(|&s| s < oldest_kept) {
            let dir = self.checkpoint_dir(seq);
            if let Err(e) = fs::remove_dir_all(&dir) {
                warn!(path = %dir.display(), error = %e, "retention could not delete checkpoint");
            }
        }
    }
}
