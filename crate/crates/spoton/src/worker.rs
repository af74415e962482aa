//! The toy workload as a supervised child process.
//!
//! Line protocol. Every line is ASCII, one space between fields, `\n`-ended.
//!
//! Coordinator to workload (stdin):
//!
//! * `CKPT-REQ <path>`: write a snapshot payload to `<path>`. Toy mode
//!   answers at the next step; application mode at the next stage boundary.
//!
//! Workload to coordinator (stdout):
//!
//! * `PROGRESS <stage> <step>`: at start, at every stage start and about every
//!   50 ms. `<stage>` is the stage name.
//! * `CKPT-START <path>`: application mode began a checkpoint of its own at a
//!   stage boundary.
//! * `CKPT-OK <path>`: the payload at `<path>` is complete and durable.
//! * `CKPT-ERR <path> <reason...>`: no payload will appear at `<path>`.
//! * `DONE <digest>`: all steps ran; the process exits 0 right after.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use spoton_core::checkpoint::{ApplicationCheckpointer, Checkpointer, CheckpointerKind, ToyCheckpointer};
use spoton_core::workload::{WorkloadSpec, WorkloadState};
use thiserror::Error;

pub const PROGRESS_EVERY: Duration = Duration::from_millis(50);

/// Environment variable naming the file a transparent-mode workload mirrors
/// its live state into, standing in for the process memory an external
/// snapshot tool would capture.
pub const STATE_FILE_ENV: &str = "SPOTON_STATE_FILE";

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("workload: {0}")]
    Spec(String),
    #[error("restore {path}: {message}")]
    Restore { path: PathBuf, message: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub spec: WorkloadSpec,
    pub mode: CheckpointerKind,
    pub restore: Option<PathBuf>,
    /// Emulated wall time of producing one snapshot.
    pub snapshot_cost: Duration,
    /// Where application mode writes its own boundary checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    pub state_file: Option<PathBuf>,
    /// Exit when stdin closes (the supervisor is gone).
    pub exit_on_eof: bool,
}

/// One protocol message from the workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerMsg {
    Progress { stage: String, step: u64 },
    CkptStart(PathBuf),
    CkptOk(PathBuf),
    CkptErr(PathBuf, String),
    Done(String),
}

impl WorkerMsg {
    pub fn parse(line: &str) -> Option<WorkerMsg> {
        let line = line.trim_end_matches(['\r', '\n']);
        let (verb, rest) = line.split_once(' ').unwrap_or((line, ""));
        match verb {
            "PROGRESS" => {
                let (stage, step) = rest.rsplit_once(' ')?;
                Some(WorkerMsg::Progress { stage: stage.to_string(), step: step.parse().ok()? })
            }
            "CKPT-START" if !rest.is_empty() => Some(WorkerMsg::CkptStart(rest.into())),
            "CKPT-OK" if !rest.is_empty() => Some(WorkerMsg::CkptOk(rest.into())),
            "CKPT-ERR" => {
                let (path, reason) = rest.split_once(' ').unwrap_or((rest, ""));
                Some(WorkerMsg::CkptErr(path.into(), reason.to_string()))
            }
            "DONE" if !rest.is_empty() => Some(WorkerMsg::Done(rest.to_string())),
            _ => None,
        }
    }
}

/// Writes `bytes` to `path` so that a reader never sees a partial file.
pub fn write_durable(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}

struct Emitter<W: Write> {
    out: W,
}

impl<W: Write> Emitter<W> {
    fn line(&mut self, text: &str) -> io::Result<()> {
        self.out.write_all(text.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    fn progress(&mut self, spec: &WorkloadSpec, state: &WorkloadState) -> io::Result<()> {
        let stage = state.stage_name(spec).unwrap_or("END");
        self.line(&format!("PROGRESS {stage} {}", state.step_index))
    }
}

enum Input {
    Request(PathBuf),
    Eof,
}

fn spawn_stdin_reader() -> mpsc::Receiver<Input> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let stdin = io::stdin();
        for line in stdin.lock().lines() {
            let Ok(line) = line else { break };
            if let Some(path) = line.strip_prefix("CKPT-REQ ") {
                if tx.send(Input::Request(PathBuf::from(path.trim()))).is_err() {
                    return;
                }
            }
        }
        let _ = tx.send(Input::Eof);
    });
    rx
}

/// Runs the workload to completion, speaking the protocol on stdout.
pub fn run_worker(opts: &WorkerOptions) -> Result<String, WorkerError> {
    let spec = &opts.spec;
    let checkpointer: Box<dyn Checkpointer> = match opts.mode {
        CheckpointerKind::Application => Box::new(ApplicationCheckpointer::new(spec.clone(), opts.snapshot_cost)),
        _ => Box::new(ToyCheckpointer::new(spec.clone(), opts.snapshot_cost)),
    };
    let mut state = match &opts.restore {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| WorkerError::Restore { path: path.clone(), message: e.to_string() })?;
            checkpointer
                .restore(&bytes)
                .map_err(|e| WorkerError::Restore { path: path.clone(), message: e.to_string() })?
        }
        None => spec.initial_state(),
    };
    let stdout = io::stdout();
    let mut out = Emitter { out: stdout.lock() };
    let input = spawn_stdin_reader();
    let mirror = |state: &WorkloadState| -> io::Result<()> {
        match &opts.state_file {
            Some(path) => write_durable(path, &state.serialize(spec)),
            None => Ok(()),
        }
    };

    out.progress(spec, &state)?;
    mirror(&state)?;
    let step_cost = spec.step_cost.unwrap_or_default();
    let mut origin = Instant::now();
    let mut paced_steps: u32 = 0;
    let mut last_report = Instant::now();
    let mut request: Option<PathBuf> = None;
    let resumed_at = state.clone();

    let snapshot = |state: &WorkloadState, path: &Path, out: &mut Emitter<_>| -> io::Result<()> {
        match checkpointer.snapshot(state) {
            Ok(payload) => {
                thread::sleep(opts.snapshot_cost);
                match write_durable(path, &payload) {
                    Ok(()) => out.line(&format!("CKPT-OK {}", path.display())),
                    Err(e) => out.line(&format!("CKPT-ERR {} {e}", path.display())),
                }
            }
            Err(e) => out.line(&format!("CKPT-ERR {} {e}", path.display())),
        }
    };

    loop {
        loop {
            match input.try_recv() {
                Ok(Input::Request(p)) => request = Some(p),
                Ok(Input::Eof) if opts.exit_on_eof => std::process::exit(3),
                Ok(Input::Eof) | Err(mpsc::TryRecvError::Disconnected) | Err(mpsc::TryRecvError::Empty) => break,
            }
        }
        let finished = state.is_finished(spec);
        let mut snapshot_taken = false;
        if let Some(path) = request.take() {
            if finished {
                out.line(&format!("CKPT-ERR {} workload finished", path.display()))?;
            } else if checkpointer.can_checkpoint_now(&state) {
                snapshot(&state, &path, &mut out)?;
                snapshot_taken = true;
            } else {
                request = Some(path);
            }
        }
        if !snapshot_taken
            && !finished
            && opts.mode == CheckpointerKind::Application
            && state.step_index == 0
            && state != resumed_at
        {
            if let Some(dir) = &opts.checkpoint_dir {
                let path = dir.join(format!("native-{}.bin", state.global_step(spec)));
                out.line(&format!("CKPT-START {}", path.display()))?;
                snapshot(&state, &path, &mut out)?;
                snapshot_taken = true;
            }
        }
        if snapshot_taken {
            // the snapshot's wall time is not made up by running faster
            origin = Instant::now();
            paced_steps = 0;
        }
        if finished {
            break;
        }
        state.step(spec).map_err(|e| WorkerError::Spec(e.to_string()))?;
        if state.step_index == 0 || last_report.elapsed() >= PROGRESS_EVERY {
            out.progress(spec, &state)?;
            mirror(&state)?;
            last_report = Instant::now();
        }
        if !step_cost.is_zero() {
            paced_steps += 1;
            let target = origin + step_cost * paced_steps;
            let now = Instant::now();
            if target > now {
                thread::sleep(target - now);
            } else if now - target > step_cost + Duration::from_millis(5) {
                // stalled (stopped, descheduled): rebase instead of catching up
                origin = now;
                paced_steps = 0;
            }
        }
    }
    let digest = state.digest(spec).map_err(|e| WorkerError::Spec(e.to_string()))?;
    out.line(&format!("DONE {digest}"))?;
    Ok(digest)
}
