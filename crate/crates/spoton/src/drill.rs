//! The eviction drill: runs `resume` in a relaunch loop against an in-process
//! mock that executes an eviction plan, then checks the final digest against
//! an eviction-free reference. The relaunch loop stands in for the platform
//! replacing a reclaimed instance.

use std::fs;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use spoton_core::ledger::RunLedger;
use spoton_core::spotsim::ReportRow;
use spoton_core::workload::WorkloadSpec;
use thiserror::Error;
use tracing::info;

use crate::config::{Config, ConfigError};
use crate::coordinator::{EXIT_COMPLETED, EXIT_EVICTED};
use crate::ledger_log::{read_ledger, LEDGER_FILE};
use crate::mock::{MockError, MockOptions, MockServer};
use crate::store::Store;

#[derive(Debug, Clone, PartialEq)]
pub enum EvictionPlan {
    None,
    /// A trigger at every positive multiple of the period.
    Every(Duration),
    /// Trigger offsets from the drill start.
    At(Vec<Duration>),
}

impl EvictionPlan {
    /// `none`, `every:<secs>` or `at:<secs>,<secs>,...`
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        let secs = |s: &str| -> Result<Duration, String> {
            let v: f64 = s.trim().parse().map_err(|_| format!("bad seconds `{s}`"))?;
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("seconds must be positive, got `{s}`"));
            }
            Ok(Duration::from_secs_f64(v))
        };
        if text.is_empty() || text == "none" {
            Ok(EvictionPlan::None)
        } else if let Some(rest) = text.strip_prefix("every:") {
            Ok(EvictionPlan::Every(secs(rest)?))
        } else if let Some(rest) = text.strip_prefix("at:") {
            let times = rest.split(',').map(secs).collect::<Result<Vec<_>, _>>()?;
            if times.windows(2).any(|w| w[1] <= w[0]) {
                return Err("plan times must be strictly increasing".into());
            }
            Ok(EvictionPlan::At(times))
        } else {
            Err(format!("unknown plan `{text}` (none | every:SECS | at:SECS,SECS,...)"))
        }
    }

    pub fn label(&self) -> String {
        match self {
            EvictionPlan::None => "N/A".into(),
            EvictionPlan::Every(d) => format!("Every {} s", d.as_secs_f64()),
            EvictionPlan::At(t) => format!("{} scheduled", t.len()),
        }
    }

    /// Trigger offsets up to `horizon`.
    pub fn triggers(&self, horizon: Duration) -> Vec<Duration> {
        match self {
            EvictionPlan::None => Vec::new(),
            EvictionPlan::At(t) => t.clone(),
            EvictionPlan::Every(e) => (1..).map(|k| *e * k).take_while(|t| *t <= horizon).take(100_000).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DrillOptions {
    pub plan: EvictionPlan,
    /// Delay requested with each trigger (raised to the mock's minimum).
    pub notice: Duration,
    /// The mock's minimum notice.
    pub min_notice: Duration,
    /// Evictions in a row without the latest valid checkpoint advancing
    /// before the drill declares nonconvergence.
    pub max_stalls: u32,
    /// Give up after this much wall time.
    pub timeout: Duration,
    /// Program run as `<program> resume --config ...`.
    pub program: PathBuf,
}

impl DrillOptions {
    pub fn new(plan: EvictionPlan, program: PathBuf) -> Self {
        DrillOptions {
            plan,
            notice: Duration::from_secs(30),
            min_notice: Duration::from_secs(30),
            max_stalls: 3,
            timeout: Duration::from_secs(24 * 3600),
            program,
        }
    }
}

#[derive(Debug, Error)]
pub enum DrillError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mock(#[from] MockError),
    #[error("drill io: {0}")]
    Io(#[from] std::io::Error),
    #[error("store: {0}")]
    Store(#[from] crate::store::StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DrillVerdict {
    /// Completed and the digest matches the reference.
    Matched,
    DigestMismatch,
    Nonconvergence,
    /// A coordinator exited with an unexpected status.
    Failed(String),
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct DrillReport {
    pub verdict: DrillVerdict,
    pub digest: Option<String>,
    pub reference_digest: String,
    pub launches: u32,
    /// Instances the mock reclaimed.
    pub reclaimed: usize,
    pub wall: Duration,
    pub ledger: RunLedger,
    pub row: ReportRow,
}

impl DrillReport {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            DrillVerdict::Matched => EXIT_COMPLETED,
            DrillVerdict::DigestMismatch => crate::coordinator::EXIT_DIGEST_MISMATCH,
            _ => crate::coordinator::EXIT_UNRECOVERABLE,
        }
    }
}

/// Workload steps covered by the latest valid checkpoint.
fn latest_progress(store: &Store, spec: &WorkloadSpec) -> Option<u64> {
    let m = store.latest_valid()?;
    let offset = crate::coordinator::stage_offset(spec, &m.progress_marker.stage).unwrap_or(spec.total_steps());
    Some(offset + m.progress_marker.step)
}

/// Runs the drill for `config`, whose store is emptied first.
pub fn run_drill(config: &Config, opts: &DrillOptions) -> Result<DrillReport, DrillError> {
    let mock = MockServer::start(
        "127.0.0.1:0".parse().expect("loopback address"),
        MockOptions { min_notice: opts.min_notice, ..MockOptions::default() },
    )?;
    let mut config = config.clone();
    config.eviction.enabled = true;
    config.eviction.metadata_endpoint = mock.events_url();
    let coord = config.coordinator()?;
    let spec = coord.workload.clone();
    let reference_digest = spec.reference_digest();

    let root = coord.store_root.clone();
    for sub in ["ckpt", "ledger", "scratch"] {
        let p = root.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p)?;
        }
    }
    let store = Store::open(&root)?;
    let config_path = root.join("drill-config.toml");
    fs::write(&config_path, config.to_toml())?;
    let log_path = root.join("drill-coordinator.log");

    let start = Instant::now();
    mock.schedule_evictions(opts.plan.triggers(opts.timeout).into_iter().map(|t| (t, opts.notice)).collect())?;

    let mut launches = 0u32;
    let mut stalls = 0u32;
    let mut last_latest = latest_progress(&store, &spec);
    let verdict = loop {
        if start.elapsed() >= opts.timeout {
            break DrillVerdict::TimedOut;
        }
        let log = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
        let mut child = Command::new(&opts.program)
            .arg("resume")
            .arg("--config")
            .arg(&config_path)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .process_group(0)
            .spawn()?;
        launches += 1;
        mock.register(child.id() as i32);
        let status = child.wait()?;
        let evicted = match (status.code(), status.signal()) {
            (Some(EXIT_COMPLETED), _) => {
                let ledger = read_ledger(&store.ledger_dir().join(LEDGER_FILE))?;
                break match &ledger.digest {
                    Some(d) if *d == reference_digest => DrillVerdict::Matched,
                    _ => DrillVerdict::DigestMismatch,
                };
            }
            (Some(EXIT_EVICTED), _) => {
                // the instance lives until NotBefore; its replacement comes after
                mock.wait_until_clear(opts.notice.max(opts.min_notice) + Duration::from_secs(5));
                true
            }
            (None, Some(libc::SIGKILL)) => true,
            (code, signal) => break DrillVerdict::Failed(format!("coordinator exited with {code:?}, signal {signal:?}")),
        };
        if evicted {
            let latest = latest_progress(&store, &spec);
            if latest == last_latest {
                stalls += 1;
                if stalls >= opts.max_stalls {
                    break DrillVerdict::Nonconvergence;
                }
            } else {
                stalls = 0;
                last_latest = latest;
            }
            info!(launches, stalls, "relaunching after eviction");
        }
    };
    let wall = start.elapsed();
    let reclaimed = mock.state().kills.iter().filter(|k| k.delivered).count();
    drop(mock);
    let ledger = read_ledger(&store.ledger_dir().join(LEDGER_FILE))?;
    let ckpt_label = match coord.checkpointer {
        spoton_core::checkpoint::CheckpointerKind::Application => "Application".to_string(),
        kind => match coord.checkpoint_interval {
            Some(t) => format!("{} {} s", capitalize(kind.as_str()), t.as_secs_f64()),
            None => "N/A".into(),
        },
    };
    let row = ReportRow::from_ledger(&ledger, &opts.plan.label(), &ckpt_label);
    Ok(DrillReport { verdict, digest: ledger.digest.clone(), reference_digest, launches, reclaimed, wall, ledger, row })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_parse() {
        assert_eq!(EvictionPlan::parse("none").unwrap(), EvictionPlan::None);
        assert_eq!(EvictionPlan::parse("every:60").unwrap(), EvictionPlan::Every(Duration::from_secs(60)));
        assert_eq!(
            EvictionPlan::parse("at:1.5,3").unwrap(),
            EvictionPlan::At(vec![Duration::from_millis(1500), Duration::from_secs(3)])
        );
        assert!(EvictionPlan::parse("at:3,1").is_err());
        assert!(EvictionPlan::parse("every:0").is_err());
        assert!(EvictionPlan::parse("sometimes").is_err());
    }

    #[test]
    fn every_expands_to_multiples() {
        let t = EvictionPlan::Every(Duration::from_secs(20)).triggers(Duration::from_secs(70));
        assert_eq!(t, [20, 40, 60].map(Duration::from_secs));
    }
}
