//! Loopback emulation of the scheduled-events metadata endpoint, with an
//! eviction trigger that hard-kills the registered target at `NotBefore`.
//!
//! Routes:
//!
//! * `GET /metadata/scheduledevents` (requires `Metadata: true`)
//! * `POST /admin/evict` `{"delay_seconds": n}`
//! * `POST /admin/register` `{"pid": n}`
//! * `GET /admin/state`

use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use spoton_core::eviction::{EventType, EventsDocument, EvictionEvent, MIN_NOTICE};
use spoton_core::Timestamp;
use thiserror::Error;
use tokio::sync::oneshot;
use tracing::{info, warn};

use crate::clock::now;

pub const EVENTS_PATH: &str = "/metadata/scheduledevents";

#[derive(Debug, Clone)]
pub struct MockOptions {
    pub min_notice: Duration,
    /// Kill the registered target at `NotBefore`.
    pub kill: bool,
    pub allow_non_loopback: bool,
    pub resource_name: String,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions { min_notice: MIN_NOTICE, kill: true, allow_non_loopback: false, resource_name: "spoton-vm".into() }
    }
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("refusing to bind non-loopback address {0}")]
    NonLoopback(SocketAddr),
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("an eviction is already pending ({0})")]
    AlreadyPending(String),
    #[error("runtime: {0}")]
    Runtime(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillRecord {
    pub event_id: String,
    pub pid: Option<i32>,
    /// Milliseconds since the epoch.
    pub at_ms: i64,
    pub not_before_ms: i64,
    /// Whether a signal was actually delivered.
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockSnapshot {
    pub document_incarnation: u64,
    pub pending: Option<EvictionEvent>,
    pub target: Option<i32>,
    pub min_notice_ms: u64,
    pub kill: bool,
    pub kills: Vec<KillRecord>,
    pub triggered: u64,
    pub rejected: u64,
}

#[derive(Debug)]
struct MockState {
    incarnation: u64,
    pending: Option<(EvictionEvent, Timestamp)>,
    target: Option<i32>,
    kills: Vec<KillRecord>,
    triggered: u64,
    rejected: u64,
    next_id: u64,
}

#[derive(Debug)]
struct Shared {
    options: MockOptions,
    state: Mutex<MockState>,
    id_prefix: String,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, MockState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn document(&self) -> EventsDocument {
        let s = self.lock();
        EventsDocument { document_incarnation: s.incarnation, events: s.pending.iter().map(|(e, _)| e.clone()).collect() }
    }

    fn snapshot(&self) -> MockSnapshot {
        let s = self.lock();
        MockSnapshot {
            document_incarnation: s.incarnation,
            pending: s.pending.as_ref().map(|(e, _)| e.clone()),
            target: s.target,
            min_notice_ms: self.options.min_notice.as_millis() as u64,
            kill: self.options.kill,
            kills: s.kills.clone(),
            triggered: s.triggered,
            rejected: s.rejected,
        }
    }

    /// Registers a pending Preempt; returns its id and deadline.
    fn trigger(&self, delay: Duration) -> Result<(String, Timestamp), MockError> {
        let mut s = self.lock();
        if let Some(id) = s.pending.as_ref().map(|(e, _)| e.event_id.clone()) {
            s.rejected += 1;
            return Err(MockError::AlreadyPending(id));
        }
        let notice = delay.max(self.options.min_notice);
        // the wire format carries whole seconds; never promise less than `notice`
        let deadline = (now() + notice).ceil_to_second();
        s.next_id += 1;
        let event = EvictionEvent {
            event_id: format!("{}-{:04}", self.id_prefix, s.next_id),
            event_status: "Scheduled".into(),
            event_type: EventType::Preempt,
            resource_type: "VirtualMachine".into(),
            resources: vec![self.options.resource_name.clone()],
            not_before: deadline.to_rfc1123(),
        };
        s.incarnation += 1;
        s.triggered += 1;
        s.pending = Some((event.clone(), deadline));
        info!(event = %event.event_id, not_before = %event.not_before, "eviction scheduled");
        Ok((event.event_id, deadline))
    }

    /// Reclaims the instance for `event_id` if it is still the pending one.
    fn reclaim(&self, event_id: &str) {
        let mut s = self.lock();
        let Some((event, deadline)) = s.pending.take_if(|(e, _)| e.event_id == event_id) else {
            return;
        };
        let pid = s.target;
        let delivered = match pid {
            Some(pid) if self.options.kill => hard_kill(pid),
            _ => false,
        };
        s.kills.push(KillRecord {
            event_id: event.event_id.clone(),
            pid,
            at_ms: now().as_millis(),
            not_before_ms: deadline.as_millis(),
            delivered,
        });
        s.incarnation += 1;
        info!(event = %event.event_id, ?pid, delivered, "instance reclaimed");
    }
}

/// SIGKILL to the target's whole process group when it leads one, else to
/// the process alone. No graceful signal first.
fn hard_kill(pid: i32) -> bool {
    if pid <= 0 {
        return false;
    }
    // SAFETY: plain syscalls on an integer pid; no memory is shared.
    unsafe {
        if libc::getpgid(pid) == pid {
            libc::killpg(pid, libc::SIGKILL) == 0
        } else {
            libc::kill(pid, libc::SIGKILL) == 0
        }
    }
}

fn sleep_until(deadline: Timestamp) -> tokio::time::Sleep {
    tokio::time::sleep(deadline.saturating_since(now()))
}

#[derive(Debug, Deserialize)]
struct EvictRequest {
    #[serde(default)]
    delay_seconds: f64,
}

#[derive(Debug, Deserialize)]
struct RegisterRequest {
    pid: i32,
}

async fn events(State(shared): State<Arc<Shared>>, headers: HeaderMap) -> Response {
    let ok = headers
        .get("metadata")
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.eq_ignore_ascii_case("true"));
    if !ok {
        return (StatusCode::BAD_REQUEST, "missing required header Metadata: true\n").into_response();
    }
    (
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        shared.document().to_json(),
    )
        .into_response()
}

async fn admin_evict(State(shared): State<Arc<Shared>>, Json(req): Json<EvictRequest>) -> Response {
    if !req.delay_seconds.is_finite() || req.delay_seconds < 0.0 {
        return (StatusCode::BAD_REQUEST, "delay_seconds must be a non-negative number\n").into_response();
    }
    match trigger_and_arm(&shared, Duration::from_secs_f64(req.delay_seconds)) {
        Ok((id, deadline)) => Json(serde_json::json!({
            "event_id": id,
            "not_before": deadline.to_rfc1123(),
        }))
        .into_response(),
        Err(e) => (StatusCode::CONFLICT, format!("{e}\n")).into_response(),
    }
}

async fn admin_register(State(shared): State<Arc<Shared>>, Json(req): Json<RegisterRequest>) -> Response {
    shared.lock().target = Some(req.pid);
    Json(serde_json::json!({ "pid": req.pid })).into_response()
}

async fn admin_state(State(shared): State<Arc<Shared>>) -> Json<MockSnapshot> {
    Json(shared.snapshot())
}

/// Must run inside the mock's runtime.
fn trigger_and_arm(shared: &Arc<Shared>, delay: Duration) -> Result<(String, Timestamp), MockError> {
    let (id, deadline) = shared.trigger(delay)?;
    let task_shared = shared.clone();
    let task_id = id.clone();
    tokio::spawn(async move {
        sleep_until(deadline).await;
        task_shared.reclaim(&task_id);
    });
    Ok((id, deadline))
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route(EVENTS_PATH, get(events))
        .route("/admin/evict", post(admin_evict))
        .route("/admin/register", post(admin_register))
        .route("/admin/state", get(admin_state))
        .with_state(shared)
}

/// A running mock. Dropping it stops the server.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: tokio::runtime::Handle,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl std::fmt::Debug for MockServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockServer").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl MockServer {
    pub fn start(bind: SocketAddr, options: MockOptions) -> Result<Self, MockError> {
        if !bind.ip().is_loopback() && !options.allow_non_loopback {
            return Err(MockError::NonLoopback(bind));
        }
        let listener = TcpListener::bind(bind).map_err(|source| MockError::Bind { addr: bind, source })?;
        listener.set_nonblocking(true).map_err(|source| MockError::Bind { addr: bind, source })?;
        let addr = listener.local_addr().map_err(|source| MockError::Bind { addr: bind, source })?;
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| MockError::Runtime(e.to_string()))?;
        let handle = runtime.handle().clone();
        let shared = Arc::new(Shared {
            options,
            state: Mutex::new(MockState {
                incarnation: 1,
                pending: None,
                target: None,
                kills: Vec::new(),
                triggered: 0,
                rejected: 0,
                next_id: 0,
            }),
            id_prefix: format!("{:08X}", now().as_millis() as u32),
        });
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(shared.clone());
        let thread = thread::Builder::new()
            .name("cloudmock".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            warn!(error = %e, "mock listener");
                            return;
                        }
                    };
                    let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                        let _ = rx.await;
                    });
                    if let Err(e) = serve.await {
                        warn!(error = %e, "mock server stopped");
                    }
                });
            })
            .map_err(|e| MockError::Runtime(e.to_string()))?;
        Ok(MockServer { addr, shared, handle, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn events_url(&self) -> String {
        format!("{}{EVENTS_PATH}", self.base_url())
    }

    pub fn register(&self, pid: i32) {
        self.shared.lock().target = Some(pid);
    }

    /// Schedules a Preempt `max(delay, min_notice)` from now; the target dies
    /// at its `NotBefore`.
    pub fn trigger_eviction(&self, delay: Duration) -> Result<String, MockError> {
        let _guard = self.handle.enter();
        trigger_and_arm(&self.shared, delay).map(|(id, _)| id)
    }

    /// Fires `trigger_eviction(delay)` at each offset from now. Triggers that
    /// find one already pending collapse into it.
    pub fn schedule_evictions(&self, plan: Vec<(Duration, Duration)>) -> Result<(), MockError> {
        if plan.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(MockError::Runtime("plan times must be strictly increasing".into()));
        }
        let shared = self.shared.clone();
        let start = tokio::time::Instant::now();
        self.handle.spawn(async move {
            for (at, delay) in plan {
                tokio::time::sleep_until(start + at).await;
                if let Err(e) = trigger_and_arm(&shared, delay) {
                    info!(error = %e, "planned eviction collapsed into the pending one");
                }
            }
        });
        Ok(())
    }

    pub fn state(&self) -> MockSnapshot {
        self.shared.snapshot()
    }

    /// Blocks until nothing is pending or `timeout` passes.
    pub fn wait_until_clear(&self, timeout: Duration) -> bool {
        let until = std::time::Instant::now() + timeout;
        loop {
            if self.shared.lock().pending.is_none() {
                return true;
            }
            if std::time::Instant::now() >= until {
                return false;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loopback() -> SocketAddr {
        "127.0.0.1:0".parse().unwrap()
    }

    #[test]
    fn refuses_non_loopback() {
        let err = MockServer::start("0.0.0.0:0".parse().unwrap(), MockOptions::default()).unwrap_err();
        assert!(matches!(err, MockError::NonLoopback(_)));
    }

    #[test]
    fn short_delay_clamped_and_second_trigger_rejected() {
        let mock = MockServer::start(loopback(), MockOptions { kill: false, ..Default::default() }).unwrap();
        let before = now();
        mock.trigger_eviction(Duration::from_secs(5)).unwrap();
        let s = mock.state();
        assert_eq!(s.document_incarnation, 2);
        let deadline = Timestamp::parse_rfc1123(&s.pending.unwrap().not_before).unwrap();
        assert!(deadline.saturating_since(before) >= Duration::from_secs(30));
        assert!(deadline.saturating_since(before) <= Duration::from_secs(31));
        assert!(matches!(mock.trigger_eviction(Duration::from_secs(60)), Err(MockError::AlreadyPending(_))));
        assert_eq!(mock.state().rejected, 1);
    }

    #[test]
    fn clears_pending_at_deadline() {
        let opts = MockOptions { kill: false, min_notice: Duration::ZERO, ..Default::default() };
        let mock = MockServer::start(loopback(), opts).unwrap();
        mock.trigger_eviction(Duration::from_millis(10)).unwrap();
        assert!(mock.wait_until_clear(Duration::from_secs(3)));
        let s = mock.state();
        assert_eq!(s.document_incarnation, 3);
        assert_eq!(s.kills.len(), 1);
        assert!(!s.kills[0].delivered);
        assert!(s.kills[0].at_ms >= s.kills[0].not_before_ms);
    }
}
