//! Line-delimited ledger persisted under `<store>/ledger/ledger.log`.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use spoton_core::ledger::{LedgerEvent, LedgerRecord, RunLedger};
use tracing::warn;

use crate::clock::now;

pub const LEDGER_FILE: &str = "ledger.log";

/// Append-only writer. Every record is synced before `append` returns, so a
/// hard kill loses at most the line being written.
#[derive(Debug)]
pub struct LedgerLog {
    path: PathBuf,
    file: File,
    records: Vec<LedgerRecord>,
}

impl LedgerLog {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LEDGER_FILE);
        let records = read_records(&path)?;
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        // a torn last line from a killed writer must not swallow the next record
        let len = file.metadata()?.len();
        if len > 0 && !fs::read(&path)?.ends_with(b"\n") {
            file.write_all(b"\n")?;
        }
        Ok(LedgerLog { path, file, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn ledger(&self) -> RunLedger {
        RunLedger::from_records(&self.records)
    }

    pub fn append(&mut self, event: LedgerEvent) -> io::Result<LedgerRecord> {
        let record = LedgerRecord::new(now(), event);
        let mut line = record.to_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.records.push(record.clone());
        Ok(record)
    }
}

/// Reads every parseable record. Unparseable lines are skipped with a warning.
pub fn read_records(path: &Path) -> io::Result<Vec<LedgerRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match LedgerRecord::parse_line(line, i + 1) {
            Ok(r) => records.push(r),
            Err(e) => warn!(path = %path.display(), error = %e, "ledger line skipped"),
        }
    }
    Ok(records)
}

pub fn read_ledger(path: &Path) -> io::Result<RunLedger> {
    Ok(RunLedger::from_records(&read_records(path)?))
}
