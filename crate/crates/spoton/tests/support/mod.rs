#![allow(dead_code)]

use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use spoton::client::{EventsClient, PollError};
use spoton::config::Config;
use spoton::mock::{MockOptions, MockServer};
use spoton::store::{CheckpointMeta, Store, StoreError, WriteStep};
use spoton_core::checkpoint::{CheckpointKind, ProgressMarker};
use spoton_core::eviction::{detect_preempt, EventType, EventsDocument};
use spoton_core::Timestamp;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_spoton"))
}

/// Toy workload, polling off, periodic checkpoints every `tau` seconds.
pub fn config(store: &Path, stages: &str, step_cost: f64, tau: f64) -> Config {
    let mut c = Config::default();
    c.workload.stages = stages.into();
    c.workload.step_cost = step_cost;
    c.workload.program = bin().to_string_lossy().into_owned();
    c.checkpoint.store_root = store.to_path_buf();
    c.checkpoint.checkpoint_interval = tau;
    c.checkpoint.snapshot_time_estimate = 0.05;
    c.eviction.enabled = false;
    c.eviction.poll_interval = 0.05;
    c
}

pub fn write_config(c: &Config, dir: &Path) -> PathBuf {
    let p = dir.join("spoton.toml");
    std::fs::write(&p, c.to_toml()).unwrap();
    p
}

/// Runs the binary quietly and returns its output.
pub fn spoton(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env("SPOTON_LOG", "warn").stdin(Stdio::null()).output().expect("spawn spoton")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn meta(n: u64) -> CheckpointMeta {
    CheckpointMeta {
        kind: CheckpointKind::Periodic,
        attempt_id: 1,
        progress_marker: ProgressMarker { stage: "K33".into(), step: n },
    }
}

/// Interrupts `write_checkpoint` after every step in turn, starting from a
/// store holding `prior` committed checkpoints, and checks after each crash
/// that `latest_valid` is a committed checkpoint with the exact bytes
/// written for it. Returns how many crash points were checked.
pub fn crash_sweep(payload: &[u8], prior: usize) -> Result<usize, String> {
    let mut checked = 0;
    for (i, step) in WriteStep::ALL.iter().enumerate() {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let store = Store::open(tmp.path()).map_err(|e| e.to_string())?;
        let mut written: Vec<(u64, Vec<u8>)> = Vec::new();
        for k in 0..prior {
            let bytes: Vec<u8> = payload.iter().map(|b| b.wrapping_add(k as u8 + 1)).collect();
            let m = store.write_checkpoint(&bytes, &meta(k as u64)).map_err(|e| e.to_string())?;
            written.push((m.sequence, bytes));
        }
        let seq = store.next_sequence();
        match store.write_checkpoint_with_crash(payload, &meta(99), Some(*step)) {
            Err(StoreError::InjectedCrash(s)) if s == *step => {}
            other => return Err(format!("{step:?}: expected an injected crash, got {other:?}")),
        }
        // the commit marker is the linearisation point
        let committed = i >= WriteStep::ALL.iter().position(|s| *s == WriteStep::CommitCreated).unwrap();
        if committed {
            written.push((seq, payload.to_vec()));
        }
        let expect = written.last();
        let latest = store.latest_valid();
        match (expect, &latest) {
            (None, None) => {}
            (Some((s, bytes)), Some(m)) => {
                if m.sequence != *s {
                    return Err(format!("{step:?}: latest_valid is seq {} but seq {s} was the last commit", m.sequence));
                }
                let got = store.read_payload(m).map_err(|e| e.to_string())?;
                if got != *bytes || !store.validate(m) {
                    return Err(format!("{step:?}: latest_valid seq {s} does not hold the committed bytes"));
                }
            }
            (e, l) => {
                return Err(format!("{step:?}: expected {:?}, latest_valid gave {:?}", e.map(|x| x.0), l.as_ref().map(|m| m.sequence)))
            }
        }
        // the store stays writable after the crash
        let next = store.write_checkpoint(b"after", &meta(100)).map_err(|e| e.to_string())?;
        let latest = store.latest_valid().ok_or("no checkpoint after recovery")?;
        if latest.sequence != next.sequence || store.read_payload(&latest).map_err(|e| e.to_string())? != b"after" {
            return Err(format!("{step:?}: recovery write is not the latest valid checkpoint"));
        }
        checked += 1;
    }
    Ok(checked)
}

fn loopback() -> std::net::SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn raw_get(url: &str) -> (u16, String) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).proxy(None).build().into();
    let mut resp = agent.get(url).header("Metadata", "true").call().unwrap();
    (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
}

/// Each check as (name, outcome).
pub fn mock_conformance() -> Vec<(&'static str, Result<(), String>)> {
    let mut out = Vec::new();
    let mock = MockServer::start(loopback(), MockOptions { kill: false, ..Default::default() }).unwrap();
    let client = EventsClient::new(mock.events_url(), "2020-07-01", Duration::from_secs(5));

    out.push((
        "empty document",
        match client.poll() {
            Ok(d) if d.events.is_empty() => Ok(()),
            other => Err(format!("{other:?}")),
        },
    ));
    out.push((
        "missing Metadata header is rejected with 400",
        match EventsClient::new(mock.events_url(), "2020-07-01", Duration::from_secs(5)).without_metadata_header().poll() {
            Err(PollError::Status(400)) => Ok(()),
            other => Err(format!("{other:?}")),
        },
    ));

    let before = spoton::clock::now();
    mock.trigger_eviction(Duration::from_secs(5)).unwrap();
    let doc = client.poll();
    out.push((
        "lossless parse",
        (|| {
            let doc = doc.as_ref().map_err(|e| e.to_string())?;
            let (status, body) = raw_get(&mock.events_url());
            if status != 200 {
                return Err(format!("status {status}"));
            }
            let raw: serde_json::Value = serde_json::from_str(&body).map_err(|e| e.to_string())?;
            let again: serde_json::Value = serde_json::from_str(&doc.to_json()).map_err(|e| e.to_string())?;
            if raw != again {
                return Err(format!("wire {raw} re-serialises as {again}"));
            }
            if EventsDocument::from_json(doc.to_json().as_bytes()).map_err(|e| e.to_string())? != *doc {
                return Err("parse(serialise(doc)) differs".into());
            }
            if mock.state().pending.as_ref() != doc.events.first() {
                return Err("client view differs from the mock's pending event".into());
            }
            Ok(())
        })(),
    ));
    out.push((
        "Preempt event with RFC-1123 NotBefore",
        (|| {
            let doc = doc.as_ref().map_err(|e| e.to_string())?;
            let e = doc.events.first().ok_or("no event")?;
            if e.event_type != EventType::Preempt {
                return Err(format!("event type {:?}", e.event_type));
            }
            let t = Timestamp::parse_rfc1123(&e.not_before).ok_or_else(|| format!("bad NotBefore `{}`", e.not_before))?;
            if t.to_rfc1123() != e.not_before || !e.not_before.ends_with(" GMT") {
                return Err(format!("NotBefore `{}` is not canonical RFC-1123", e.not_before));
            }
            Ok(())
        })(),
    ));
    out.push((
        "5 s trigger delay clamps to 30 s",
        (|| {
            let doc = doc.as_ref().map_err(|e| e.to_string())?;
            let n = detect_preempt(doc, before).ok_or("no preempt detected")?;
            let lead = n.deadline.saturating_since(before);
            if lead < Duration::from_secs(30) || lead > Duration::from_secs(32) {
                return Err(format!("NotBefore is {lead:?} after the trigger"));
            }
            Ok(())
        })(),
    ));
    out.push((
        "second trigger while pending is rejected",
        match (mock.trigger_eviction(Duration::from_secs(40)), mock.state().rejected) {
            (Err(_), 1) => Ok(()),
            other => Err(format!("{other:?}")),
        },
    ));
    out
}

/// A process in its own group the mock may reclaim.
pub fn spawn_victim() -> std::process::Child {
    Command::new("sleep").arg("60").process_group(0).spawn().expect("spawn sleep")
}

/// Triggers with `notice` of minimum notice against a victim and checks that
/// the kill lands in `[NotBefore, NotBefore + 1 s)` and that the document
/// moves on to a new, empty incarnation.
pub fn kill_timing(notice: Duration) -> Result<(), String> {
    let mock = MockServer::start(loopback(), MockOptions { min_notice: notice, ..Default::default() }).unwrap();
    let client = EventsClient::new(mock.events_url(), "2020-07-01", Duration::from_secs(5));
    let mut victim = spawn_victim();
    mock.register(victim.id() as i32);
    mock.trigger_eviction(Duration::ZERO).map_err(|e| e.to_string())?;
    let pending = client.poll().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let status = loop {
        if let Some(s) = victim.try_wait().map_err(|e| e.to_string())? {
            break s;
        }
        if start.elapsed() > notice + Duration::from_secs(5) {
            let _ = victim.kill();
            return Err("victim was never killed".into());
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    if status.signal() != Some(libc::SIGKILL) {
        return Err(format!("victim ended with {status:?}, not SIGKILL"));
    }
    let kill = mock.state().kills.first().cloned().ok_or("no kill record")?;
    if !kill.delivered || kill.at_ms < kill.not_before_ms || kill.at_ms >= kill.not_before_ms + 1000 {
        return Err(format!("kill at {} ms for NotBefore {} ms", kill.at_ms, kill.not_before_ms));
    }
    let after = client.poll().map_err(|e| e.to_string())?;
    if !after.events.is_empty() || after.document_incarnation <= pending.document_incarnation {
        return Err(format!("after the kill: {after:?} (was incarnation {})", pending.document_incarnation));
    }
    Ok(())
}
