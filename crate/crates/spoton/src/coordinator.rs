//! Supervises one workload attempt: periodic checkpoints on a timer, an
//! eviction poller, termination checkpoints, and restore from the latest
//! valid checkpoint on resume.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use spoton_core::checkpoint::{
    ApplicationCheckpointer, CheckpointKind, Checkpointer, CheckpointerKind, ProgressMarker, ToyCheckpointer,
};
use spoton_core::eviction::{detect_preempt, notice_budget_with_floor, EvictionNotice};
use spoton_core::ledger::{EndReason, LedgerEvent, RunLedger, StartMode};
use spoton_core::policy::{on_eviction_notice, schedule_next_checkpoint, Action, SnapshotEstimate};
use spoton_core::workload::{WorkloadSpec, WorkloadState};
use spoton_core::Timestamp;
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::client::EventsClient;
use crate::clock::now;
use crate::config::CoordinatorConfig;
use crate::external::ExternalCheckpointer;
use crate::ledger_log::LedgerLog;
use crate::store::{CheckpointMeta, Store, StoreError};
use crate::worker::{WorkerMsg, STATE_FILE_ENV};

pub const EXIT_COMPLETED: i32 = 0;
pub const EXIT_EVICTED: i32 = 64;
pub const EXIT_UNRECOVERABLE: i32 = 65;
pub const EXIT_CONFIG: i32 = 66;
pub const EXIT_DIGEST_MISMATCH: i32 = 70;

/// Stop waiting for a termination checkpoint this long before the deadline.
const DEADLINE_MARGIN: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum CoordError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("ledger: {0}")]
    Ledger(#[from] std::io::Error),
    #[error("cannot start workload {program}: {message}")]
    Spawn { program: PathBuf, message: String },
    #[error("workload failed: {0}")]
    Workload(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed { digest: String, ledger: RunLedger },
    Evicted { ledger: RunLedger },
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunOutcome::Completed { .. } => EXIT_COMPLETED,
            RunOutcome::Evicted { .. } => EXIT_EVICTED,
        }
    }

    pub fn ledger(&self) -> &RunLedger {
        match self {
            RunOutcome::Completed { ledger, .. } | RunOutcome::Evicted { ledger } => ledger,
        }
    }
}

pub fn run(config: &CoordinatorConfig) -> Result<RunOutcome, CoordError> {
    Coordinator::new(config.clone()).attempt(StartMode::Run)
}

pub fn resume(config: &CoordinatorConfig) -> Result<RunOutcome, CoordError> {
    Coordinator::new(config.clone()).attempt(StartMode::Resume)
}

enum Event {
    Worker(WorkerMsg),
    WorkerClosed,
    Notice(EvictionNotice),
    ExternalDone(u64, Result<Vec<u8>, String>),
}

#[derive(Debug)]
struct Inflight {
    id: u64,
    kind: CheckpointKind,
    /// Where the workload writes the payload (toy and application modes).
    path: Option<PathBuf>,
    started: Instant,
    started_at: Timestamp,
}

#[derive(Debug)]
struct Stopping {
    notice: EvictionNotice,
    action: Action,
    below_floor: bool,
    wait_until: Instant,
}

pub struct Coordinator {
    cfg: CoordinatorConfig,
    program: PathBuf,
}

/// Steps before the stage called `name`.
pub fn stage_offset(spec: &WorkloadSpec, name: &str) -> Option<u64> {
    let idx = spec.stages().iter().position(|s| s.name == name)?;
    Some(spec.stages()[..idx].iter().map(|s| s.steps).sum())
}

fn checkpointer_for(cfg: &CoordinatorConfig) -> Box<dyn Checkpointer> {
    match cfg.checkpointer {
        CheckpointerKind::Application => {
            Box::new(ApplicationCheckpointer::new(cfg.workload.clone(), cfg.snapshot_time_estimate))
        }
        _ => Box::new(ToyCheckpointer::new(cfg.workload.clone(), cfg.snapshot_time_estimate)),
    }
}

impl Coordinator {
    pub fn new(cfg: CoordinatorConfig) -> Self {
        let program = cfg
            .program
            .clone()
            .or_else(|| std::env::current_exe().ok())
            .unwrap_or_else(|| PathBuf::from("spoton"));
        Coordinator { cfg, program }
    }

    fn external(&self, scratch: &Path) -> ExternalCheckpointer {
        ExternalCheckpointer::new(&self.cfg.snapshot_cmd, &self.cfg.restore_cmd)
            .with_env(STATE_FILE_ENV, scratch.join("live-state.bin").to_string_lossy())
    }

    /// Finds the newest checkpoint that restores, logging each one that does
    /// not. Returns (sequence, file to resume from, restored state).
    fn prepare_restore(
        &self,
        store: &Store,
        log: &mut LedgerLog,
        attempt: u64,
        scratch: &Path,
    ) -> Result<Option<(u64, PathBuf, WorkloadState)>, CoordError> {
        let spec = &self.cfg.workload;
        let checkpointer = checkpointer_for(&self.cfg);
        for m in store.valid_checkpoints() {
            let result: Result<(PathBuf, WorkloadState), String> = (|| {
                let payload = store.read_payload(&m).map_err(|e| e.to_string())?;
                if self.cfg.checkpointer == CheckpointerKind::Transparent {
                    let dir = scratch.join(format!("restore-{}", m.sequence));
                    let state_file = self.external(scratch).restore(&payload, &dir).map_err(|e| e.to_string())?;
                    let bytes = fs::read(&state_file).map_err(|e| e.to_string())?;
                    let state = WorkloadState::deserialize(&bytes, spec).map_err(|e| e.to_string())?;
                    Ok((state_file, state))
                } else {
                    let state = checkpointer.restore(&payload).map_err(|e| e.to_string())?;
                    let file = scratch.join(format!("restore-{}.bin", m.sequence));
                    fs::write(&file, &payload).map_err(|e| e.to_string())?;
                    Ok((file, state))
                }
            })();
            match result {
                Ok((file, state)) => return Ok(Some((m.sequence, file, state))),
                Err(reason) => {
                    warn!(seq = m.sequence, %reason, "restore failed; trying an older checkpoint");
                    log.append(LedgerEvent::Fallback { attempt, seq: m.sequence, reason })?;
                }
            }
        }
        Ok(None)
    }

    fn spawn_worker(&self, restore: Option<&Path>, scratch: &Path) -> Result<Child, CoordError> {
        let cfg = &self.cfg;
        let spec = &cfg.workload;
        let mut cmd = Command::new(&self.program);
        cmd.arg("workload")
            .arg("--stages")
            .arg(spec.stages_string())
            .arg("--seed")
            .arg(spec.seed.to_string())
            .arg("--step-cost")
            .arg(spec.step_cost.unwrap_or_default().as_secs_f64().to_string())
            .arg("--mode")
            .arg(cfg.checkpointer.as_str())
            .arg("--snapshot-cost")
            .arg(cfg.snapshot_cost.as_secs_f64().to_string())
            .arg("--exit-on-eof");
        if cfg.checkpointer == CheckpointerKind::Application && cfg.checkpoint_interval.is_some() {
            cmd.arg("--checkpoint-dir").arg(scratch);
        }
        if cfg.checkpointer == CheckpointerKind::Transparent {
            cmd.env(STATE_FILE_ENV, scratch.join("live-state.bin"));
        }
        if let Some(path) = restore {
            cmd.arg("--restore").arg(path);
        }
        cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
        cmd.spawn().map_err(|e| CoordError::Spawn { program: self.program.clone(), message: e.to_string() })
    }

    pub fn attempt(&self, mode: StartMode) -> Result<RunOutcome, CoordError> {
        let cfg = &self.cfg;
        let spec = &cfg.workload;
        let store = Store::open(&cfg.store_root)?;
        let mut log = LedgerLog::open(&store.ledger_dir())?;
        let attempt = log.ledger().next_attempt_id();
        let scratch = store.scratch_dir().join(format!("attempt-{attempt}"));
        fs::create_dir_all(&scratch)?;

        let restored = match mode {
            StartMode::Resume => self.prepare_restore(&store, &mut log, attempt, &scratch)?,
            StartMode::Run => None,
        };
        let (from_seq, restore_file, start_state) = match restored {
            Some((seq, file, state)) => (Some(seq), Some(file), state),
            None => (None, None, spec.initial_state()),
        };
        let start_progress = start_state.global_step(spec);
        log.append(LedgerEvent::AttemptStart { attempt, mode, from_seq, progress: start_progress })?;
        info!(attempt, ?mode, ?from_seq, progress = start_progress, "attempt started");

        let mut child = match self.spawn_worker(restore_file.as_deref(), &scratch) {
            Ok(c) => c,
            Err(e) => {
                log.append(LedgerEvent::AttemptEnd { attempt, reason: EndReason::Failed, progress: start_progress })?;
                return Err(e);
            }
        };
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel::<Event>();
        {
            let tx = tx.clone();
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let Ok(line) = line else { break };
                    match WorkerMsg::parse(&line) {
                        Some(msg) => {
                            if tx.send(Event::Worker(msg)).is_err() {
                                return;
                            }
                        }
                        None => debug!(%line, "unrecognised workload output"),
                    }
                }
                let _ = tx.send(Event::WorkerClosed);
            });
        }
        let stop_poller = Arc::new(AtomicBool::new(false));
        if let Some(url) = &cfg.metadata_endpoint {
            spawn_poller(
                EventsClient::new(url.clone(), cfg.api_version.clone(), cfg.poll_interval.max(Duration::from_secs(1))),
                cfg.poll_interval,
                tx.clone(),
                stop_poller.clone(),
            );
        }

        let mut sup = Supervisor {
            cfg,
            store: &store,
            log: &mut log,
            attempt,
            scratch: &scratch,
            child: &mut child,
            stdin,
            tx,
            external: (cfg.checkpointer == CheckpointerKind::Transparent).then(|| self.external(&scratch)),
            origin: Instant::now(),
            last_completed: Duration::ZERO,
            inflight: None,
            next_ckpt_id: 0,
            stopping: None,
            estimate: SnapshotEstimate::new(cfg.snapshot_time_estimate),
            seen_events: HashSet::new(),
            stage: start_state.stage_name(spec).map(str::to_string),
            stage_started: Instant::now(),
            progress: start_progress,
            marker: ProgressMarker::of(&start_state, spec),
            digest: None,
        };
        let result = sup.supervise(&rx);
        stop_poller.store(true, Ordering::Relaxed);
        drop(sup);
        if result.is_ok() {
            let _ = fs::remove_dir_all(&scratch);
        }
        result.map(|(outcome_digest, evicted)| {
            let ledger = log.ledger();
            match (outcome_digest, evicted) {
                (Some(digest), false) => RunOutcome::Completed { digest, ledger },
                _ => RunOutcome::Evicted { ledger },
            }
        })
    }
}

fn spawn_poller(client: EventsClient, every: Duration, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    thread::spawn(move || {
        let mut failures = 0u64;
        let mut next = Instant::now();
        while !stop.load(Ordering::Relaxed) {
            match client.poll() {
                Ok(doc) => {
                    if failures > 0 {
                        info!(failures, "metadata endpoint reachable again");
                        failures = 0;
                    }
                    if let Some(notice) = detect_preempt(&doc, now()) {
                        if tx.send(Event::Notice(notice)).is_err() {
                            return;
                        }
                    }
                }
                Err(e) => {
                    failures += 1;
                    if failures == 1 || failures % 30 == 0 {
                        warn!(error = %e, failures, "poll failed; retrying next tick");
                    }
                }
            }
            next += every;
            let now = Instant::now();
            if next > now {
                thread::sleep(next - now);
            } else {
                next = now;
            }
        }
    });
}

struct Supervisor<'a> {
    cfg: &'a CoordinatorConfig,
    store: &'a Store,
    log: &'a mut LedgerLog,
    attempt: u64,
    scratch: &'a Path,
    child: &'a mut Child,
    stdin: ChildStdin,
    tx: Sender<Event>,
    external: Option<ExternalCheckpointer>,
    origin: Instant,
    last_completed: Duration,
    inflight: Option<Inflight>,
    next_ckpt_id: u64,
    stopping: Option<Stopping>,
    estimate: SnapshotEstimate,
    seen_events: HashSet<String>,
    stage: Option<String>,
    stage_started: Instant,
    progress: u64,
    marker: ProgressMarker,
    digest: Option<String>,
}

/// (digest if completed, evicted)
type Finish = (Option<String>, bool);

impl Supervisor<'_> {
    fn periodic_enabled(&self) -> bool {
        self.cfg.checkpoint_interval.is_some() && self.cfg.checkpointer.on_demand()
    }

    fn next_due(&self) -> Option<Instant> {
        let interval = self.cfg.checkpoint_interval?;
        if !self.periodic_enabled() || self.inflight.is_some() || self.stopping.is_some() || self.digest.is_some() {
            return None;
        }
        let now = self.origin.elapsed();
        Some(self.origin + schedule_next_checkpoint(self.last_completed, interval, now))
    }

    fn supervise(&mut self, rx: &mpsc::Receiver<Event>) -> Result<Finish, CoordError> {
        loop {
            let wake = [self.next_due(), self.stopping.as_ref().map(|s| s.wait_until)].into_iter().flatten().min();
            let event = match wake {
                Some(at) => match rx.recv_timeout(at.saturating_duration_since(Instant::now())) {
                    Ok(ev) => Some(ev),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => Some(Event::WorkerClosed),
                },
                None => Some(rx.recv().unwrap_or(Event::WorkerClosed)),
            };
            let finished = match event {
                None => self.on_tick()?,
                Some(ev) => self.on_event(ev)?,
            };
            if let Some(f) = finished {
                return Ok(f);
            }
        }
    }

    fn on_tick(&mut self) -> Result<Option<Finish>, CoordError> {
        if let Some(s) = &self.stopping {
            if Instant::now() >= s.wait_until {
                info!("termination checkpoint did not finish before the deadline");
                if let Some(inflight) = self.inflight.take() {
                    self.log.append(LedgerEvent::Checkpoint {
                        attempt: self.attempt,
                        seq: None,
                        kind: inflight.kind,
                        started: inflight.started_at,
                        ok: false,
                        progress: self.progress,
                        error: Some("abandoned at the eviction deadline".into()),
                    })?;
                }
                return self.stop(false).map(Some);
            }
            return Ok(None);
        }
        if self.next_due().is_some_and(|due| Instant::now() >= due) {
            self.start_checkpoint(CheckpointKind::Periodic)?;
        }
        Ok(None)
    }

    fn start_checkpoint(&mut self, kind: CheckpointKind) -> Result<(), CoordError> {
        self.next_ckpt_id += 1;
        let id = self.next_ckpt_id;
        let mut inflight =
            Inflight { id, kind, path: None, started: Instant::now(), started_at: now() };
        match &self.external {
            Some(ext) => {
                let ext = ext.clone();
                let pid = self.child.id();
                let dir = self.scratch.join(format!("snap-{id}"));
                let tx = self.tx.clone();
                thread::spawn(move || {
                    let res = ext.snapshot(pid, &dir).map_err(|e| e.to_string());
                    let _ = tx.send(Event::ExternalDone(id, res));
                });
            }
            None => {
                let path = self.scratch.join(format!("ckpt-{id}.bin"));
                let line = format!("CKPT-REQ {}\n", path.display());
                if let Err(e) = self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()) {
                    warn!(error = %e, "could not reach the workload for a checkpoint");
                }
                inflight.path = Some(path);
            }
        }
        debug!(id, kind = kind.as_str(), "checkpoint started");
        self.inflight = Some(inflight);
        Ok(())
    }

    fn on_event(&mut self, ev: Event) -> Result<Option<Finish>, CoordError> {
        match ev {
            Event::Worker(WorkerMsg::Progress { stage, step }) => {
                self.on_progress(stage, step)?;
                Ok(None)
            }
            Event::Worker(WorkerMsg::CkptStart(path)) => {
                if self.inflight.is_none() {
                    self.next_ckpt_id += 1;
                    self.inflight = Some(Inflight {
                        id: self.next_ckpt_id,
                        kind: CheckpointKind::Periodic,
                        path: Some(path),
                        started: Instant::now(),
                        started_at: now(),
                    });
                }
                Ok(None)
            }
            Event::Worker(WorkerMsg::CkptOk(path)) => {
                let Some(inflight) = self.inflight.take_if(|i| i.path.as_deref() == Some(path.as_path())) else {
                    warn!(path = %path.display(), "unexpected checkpoint acknowledgement");
                    return Ok(None);
                };
                let payload = fs::read(&path).map_err(|e| e.to_string());
                let _ = fs::remove_file(&path);
                self.commit(inflight, payload)
            }
            Event::Worker(WorkerMsg::CkptErr(path, reason)) => {
                let Some(inflight) = self.inflight.take_if(|i| i.path.as_deref() == Some(path.as_path())) else {
                    return Ok(None);
                };
                self.commit(inflight, Err(reason))
            }
            Event::ExternalDone(id, result) => {
                let Some(inflight) = self.inflight.take_if(|i| i.id == id) else {
                    return Ok(None);
                };
                self.commit(inflight, result)
            }
            Event::Worker(WorkerMsg::Done(digest)) => {
                self.close_stage()?;
                self.digest = Some(digest);
                Ok(None)
            }
            Event::WorkerClosed => self.on_worker_exit().map(Some),
            Event::Notice(notice) => self.on_notice(notice),
        }
    }

    fn on_progress(&mut self, stage: String, step: u64) -> Result<(), CoordError> {
        let spec = &self.cfg.workload;
        if let Some(offset) = stage_offset(spec, &stage) {
            self.progress = offset + step;
        }
        self.marker = ProgressMarker { stage: stage.clone(), step };
        if self.stage.as_deref() != Some(stage.as_str()) {
            self.close_stage()?;
            self.stage = (stage != "END").then_some(stage);
            self.stage_started = Instant::now();
        }
        Ok(())
    }

    fn close_stage(&mut self) -> Result<(), CoordError> {
        if let Some(name) = self.stage.take() {
            let wall = self.stage_started.elapsed();
            self.log.append(LedgerEvent::Stage { attempt: self.attempt, name, wall })?;
        }
        Ok(())
    }

    fn commit(&mut self, inflight: Inflight, payload: Result<Vec<u8>, String>) -> Result<Option<Finish>, CoordError> {
        let spec = &self.cfg.workload;
        let result = payload.and_then(|bytes| {
            // the marker comes from the payload itself when we can read it
            let (marker, progress) = match WorkloadState::deserialize(&bytes, spec) {
                Ok(state) => (ProgressMarker::of(&state, spec), state.global_step(spec)),
                Err(_) => (self.marker.clone(), self.progress),
            };
            let meta = CheckpointMeta { kind: inflight.kind, attempt_id: self.attempt, progress_marker: marker };
            self.store.write_checkpoint(&bytes, &meta).map(|m| (m, progress)).map_err(|e| e.to_string())
        });
        let ok = result.is_ok();
        match result {
            Ok((manifest, progress)) => {
                self.estimate.observe(inflight.started.elapsed());
                self.log.append(LedgerEvent::Checkpoint {
                    attempt: self.attempt,
                    seq: Some(manifest.sequence),
                    kind: inflight.kind,
                    started: inflight.started_at,
                    ok: true,
                    progress,
                    error: None,
                })?;
                info!(seq = manifest.sequence, kind = inflight.kind.as_str(), progress, "checkpoint committed");
                // the payload can be ahead of the last PROGRESS line
                self.progress = self.progress.max(progress);
            }
            Err(error) => {
                warn!(%error, "checkpoint failed; the run continues");
                self.log.append(LedgerEvent::Checkpoint {
                    attempt: self.attempt,
                    seq: None,
                    kind: inflight.kind,
                    started: inflight.started_at,
                    ok: false,
                    progress: self.progress,
                    error: Some(error),
                })?;
            }
        }
        self.last_completed = self.origin.elapsed();
        if self.stopping.is_some() {
            return self.stop(ok).map(Some);
        }
        Ok(None)
    }

    fn on_notice(&mut self, notice: EvictionNotice) -> Result<Option<Finish>, CoordError> {
        if !self.seen_events.insert(notice.event_id.clone()) || self.stopping.is_some() || self.digest.is_some() {
            return Ok(None);
        }
        let at = now();
        let budget = notice_budget_with_floor(&notice, at, self.cfg.min_notice_floor);
        let plan = on_eviction_notice(&notice, self.inflight.is_some(), self.estimate.current(), at);
        info!(event = %notice.event_id, budget_ms = budget.budget.as_millis() as u64, action = plan.action.as_str(), reason = %plan.reason, "eviction notice");
        if budget.below_floor {
            warn!(event = %notice.event_id, "notice shorter than the protocol minimum");
        }
        let wait_until = Instant::now() + budget.budget.saturating_sub(DEADLINE_MARGIN);
        self.stopping = Some(Stopping { notice, action: plan.action, below_floor: budget.below_floor, wait_until });
        match plan.action {
            Action::TerminationCheckpointThenStop => {
                self.start_checkpoint(CheckpointKind::Termination)?;
                Ok(None)
            }
            Action::Ignore => {
                if let Some(i) = self.inflight.as_mut() {
                    i.kind = CheckpointKind::Termination;
                }
                Ok(None)
            }
            Action::StopWithoutCheckpoint => self.stop(false).map(Some),
        }
    }

    fn stop(&mut self, termination_ckpt_ok: bool) -> Result<Finish, CoordError> {
        let s = self.stopping.take().expect("stopping");
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.close_stage()?;
        self.log.append(LedgerEvent::Eviction {
            attempt: self.attempt,
            event_id: s.notice.event_id.clone(),
            deadline: s.notice.deadline,
            action: s.action,
            termination_ckpt_ok,
            below_floor: s.below_floor,
            progress: self.progress,
        })?;
        self.log.append(LedgerEvent::AttemptEnd { attempt: self.attempt, reason: EndReason::Evicted, progress: self.progress })?;
        info!(termination_ckpt_ok, "stopped for eviction");
        Ok((None, true))
    }

    fn on_worker_exit(&mut self) -> Result<Finish, CoordError> {
        let status = self.child.wait()?;
        match (&self.digest, status.success()) {
            (Some(digest), true) => {
                let digest = digest.clone();
                self.close_stage()?;
                self.log.append(LedgerEvent::Done { attempt: self.attempt, digest: digest.clone() })?;
                self.log.append(LedgerEvent::AttemptEnd {
                    attempt: self.attempt,
                    reason: EndReason::Completed,
                    progress: self.cfg.workload.total_steps(),
                })?;
                info!(%digest, "workload completed");
                Ok((Some(digest), false))
            }
            _ => {
                self.log.append(LedgerEvent::AttemptEnd { attempt: self.attempt, reason: EndReason::Failed, progress: self.progress })?;
                Err(CoordError::Workload(format!("workload exited with {status}")))
            }
        }
    }
}
