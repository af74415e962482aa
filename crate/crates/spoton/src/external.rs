//! Transparent checkpointing through external commands (CRIU-style).
//!
//! `snapshot_cmd` runs with `{pid}` and `{dir}` substituted and must leave
//! the process image in `{dir}`; the payload is a tar of that directory.
//! `restore_cmd` runs with `{dir}` pointing at the unpacked payload. A
//! restore that leaves `{dir}/state.bin` behind resumes the workload from it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use thiserror::Error;

pub const RESTORED_STATE: &str = "state.bin";

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("could not run `{cmd}`: {source}")]
    Spawn { cmd: String, source: std::io::Error },
    #[error("`{cmd}` exited with {status}: {stderr}")]
    Exit { cmd: String, status: String, stderr: String },
    #[error("packaging {path}: {source}")]
    Package { path: PathBuf, source: std::io::Error },
    #[error("restore left no {RESTORED_STATE} in {0}")]
    NoState(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExternalCheckpointer {
    snapshot_cmd: String,
    restore_cmd: String,
    env: Vec<(String, String)>,
}

/// Single-quotes `s` for `sh`.
fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn expand(template: &str, pid: Option<u32>, dir: &Path) -> String {
    let mut cmd = template.replace("{dir}", &quote(&dir.to_string_lossy()));
    if let Some(pid) = pid {
        cmd = cmd.replace("{pid}", &pid.to_string());
    }
    cmd
}

impl ExternalCheckpointer {
    pub fn new(snapshot_cmd: impl Into<String>, restore_cmd: impl Into<String>) -> Self {
        ExternalCheckpointer { snapshot_cmd: snapshot_cmd.into(), restore_cmd: restore_cmd.into(), env: Vec::new() }
    }

    /// Extra environment for both commands.
    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    fn run(&self, cmd: &str) -> Result<(), ExternalError> {
        let out = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .envs(self.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .output()
            .map_err(|source| ExternalError::Spawn { cmd: cmd.into(), source })?;
        if out.status.success() {
            return Ok(());
        }
        let stderr = String::from_utf8_lossy(&out.stderr);
        let tail: String = stderr.trim().chars().rev().take(200).collect::<Vec<_>>().into_iter().rev().collect();
        Err(ExternalError::Exit { cmd: cmd.into(), status: out.status.to_string(), stderr: tail })
    }

    /// Snapshots process `pid` into a fresh `dir` and returns the packaged directory.
    pub fn snapshot(&self, pid: u32, dir: &Path) -> Result<Vec<u8>, ExternalError> {
        let package = |source| ExternalError::Package { path: dir.into(), source };
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(package)?;
        }
        fs::create_dir_all(dir).map_err(package)?;
        self.run(&expand(&self.snapshot_cmd, Some(pid), dir))?;
        let mut builder = tar::Builder::new(Vec::new());
        builder.append_dir_all(".", dir).map_err(package)?;
        let bytes = builder.into_inner().map_err(package)?;
        let _ = fs::remove_dir_all(dir);
        Ok(bytes)
    }

    /// Unpacks `payload` into a fresh `dir`, runs the restore command and
    /// returns the state file it left behind.
    pub fn restore(&self, payload: &[u8], dir: &Path) -> Result<PathBuf, ExternalError> {
        let package = |source| ExternalError::Package { path: dir.into(), source };
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(package)?;
        }
        fs::create_dir_all(dir).map_err(package)?;
        tar::Archive::new(payload).unpack(dir).map_err(package)?;
        self.run(&expand(&self.restore_cmd, None, dir))?;
        let state = dir.join(RESTORED_STATE);
        if state.is_file() {
            Ok(state)
        } else {
            Err(ExternalError::NoState(dir.into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_are_quoted() {
        assert_eq!(expand("criu dump -t {pid} -D {dir}", Some(7), Path::new("/a b/it's")), r"criu dump -t 7 -D '/a b/it'\''s'");
    }

    #[test]
    fn stub_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("known.bin");
        fs::write(&src, b"known state").unwrap();
        let ext = ExternalCheckpointer::new(
            "cp \"$SRC\" {dir}/state.bin && echo {pid} > {dir}/pid",
            "test -f {dir}/state.bin",
        )
        .with_env("SRC", src.to_string_lossy());
        let payload = ext.snapshot(1234, &tmp.path().join("snap")).unwrap();
        let state = ext.restore(&payload, &tmp.path().join("restore")).unwrap();
        assert_eq!(fs::read(&state).unwrap(), b"known state");
        assert_eq!(fs::read_to_string(tmp.path().join("restore/pid")).unwrap().trim(), "1234");
    }

    #[test]
    fn failures_surface() {
        let tmp = tempfile::tempdir().unwrap();
        let ext = ExternalCheckpointer::new("echo nope >&2; exit 1", "true");
        match ext.snapshot(1, &tmp.path().join("s")) {
            Err(ExternalError::Exit { stderr, .. }) => assert_eq!(stderr, "nope"),
            other => panic!("{other:?}"),
        }
        let ok = ExternalCheckpointer::new("true", "true");
        let payload = ok.snapshot(1, &tmp.path().join("s")).unwrap();
        assert!(matches!(ok.restore(&payload, &tmp.path().join("r")), Err(ExternalError::NoState(_))));
        let failing = ExternalCheckpointer::new("true", "exit 3");
        assert!(matches!(failing.restore(&payload, &tmp.path().join("r")), Err(ExternalError::Exit { .. })));
    }
}
