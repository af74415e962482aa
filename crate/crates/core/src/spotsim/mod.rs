//! Makespan and cost simulation of a checkpointed workload under periodic
//! evictions.
//!
//! The replay is event-driven and exact to the millisecond:
//!
//! * work advances one-for-one with wall time while the workload runs;
//! * a checkpoint freezes the workload for `checkpoint_overhead`, captures
//!   progress at its start and commits at its end;
//! * evictions strike at every positive multiple of `eviction_interval`,
//!   discard uncommitted progress (including a checkpoint being written) and
//!   cost `reprovision_delay`, plus `restore_time` when there is a checkpoint
//!   to restore;
//! * the periodic timer restarts after every commit and every resume.
//!
//! Simultaneous events resolve as: completion, then checkpoint commit, then
//! eviction.

mod calibrate;
mod cost;
mod report;

use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use thiserror::Error;

pub use calibrate::{fit_overheads, FitTarget, Overheads, OverheadGrid};
pub use cost::{cost, savings, Money, PricingModel, SavingsError};
pub use report::{
    metaspades_runs, parse_ckpt_label, parse_eviction_label, recorded_claims, recorded_fit_targets, RecordedClaims, Report, ReportRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckpointPolicy {
    /// Every `τ` of wall time since the last commit or resume.
    Periodic(Duration),
    /// At every internal stage boundary.
    BoundaryOnly,
    None,
}

impl fmt::Display for CheckpointPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointPolicy::Periodic(tau) => write!(f, "periodic:{}", tau.as_secs_f64()),
            CheckpointPolicy::BoundaryOnly => f.write_str("boundary"),
            CheckpointPolicy::None => f.write_str("none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimParams {
    /// Eviction-free duration of each stage.
    pub stage_durations: Vec<Duration>,
    pub checkpoint_policy: CheckpointPolicy,
    pub checkpoint_overhead: Duration,
    pub restore_time: Duration,
    pub reprovision_delay: Duration,
    /// `None` means no evictions.
    pub eviction_interval: Option<Duration>,
    /// Give up past this makespan. Defaults to 100× the eviction-free work.
    pub horizon: Option<Duration>,
}

impl SimParams {
    pub fn new(stage_durations: Vec<Duration>, checkpoint_policy: CheckpointPolicy) -> Self {
        SimParams {
            stage_durations,
            checkpoint_policy,
            checkpoint_overhead: Duration::ZERO,
            restore_time: Duration::ZERO,
            reprovision_delay: Duration::ZERO,
            eviction_interval: None,
            horizon: None,
        }
    }

    pub fn with_overheads(mut self, o: Overheads) -> Self {
        self.checkpoint_overhead = o.checkpoint;
        self.restore_time = o.restore;
        self.reprovision_delay = o.reprovision;
        self
    }

    pub fn every(mut self, eviction_interval: Duration) -> Self {
        self.eviction_interval = Some(eviction_interval);
        self
    }

    pub fn work(&self) -> Duration {
        self.stage_durations.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimResult {
    pub makespan: Duration,
    pub evictions: u64,
    pub lost_work: Duration,
    pub checkpoints_taken: u64,
    pub spot_cost: Money,
    pub on_demand_cost: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no completion within the {horizon:?} horizon (progress {progress:?} of {work:?})")]
    Nonconvergence { horizon: Duration, progress: Duration, work: Duration },
    #[error("invalid parameters: {0}")]
    Invalid(&'static str),
}

fn ms(d: Duration) -> u64 {
    d.as_millis() as u64
}

/// Replays the run and prices it.
pub fn simulate(params: &SimParams, pricing: &PricingModel) -> Result<SimResult, SimError> {
    let tau = match params.checkpoint_policy {
        CheckpointPolicy::Periodic(t) if t.is_zero() => return Err(SimError::Invalid("periodic interval must be positive")),
        CheckpointPolicy::Periodic(t) => ms(t),
        _ => u64::MAX,
    };
    let evict_every = match params.eviction_interval {
        Some(e) if e.is_zero() => return Err(SimError::Invalid("eviction interval must be positive")),
        Some(e) => ms(e),
        None => u64::MAX,
    };
    let work = ms(params.work());
    let cap = params.horizon.map(ms).unwrap_or(work.saturating_mul(100));
    let c = ms(params.checkpoint_overhead);
    let r = ms(params.restore_time);
    let p = ms(params.reprovision_delay);

    let mut boundaries: Vec<u64> = params
        .stage_durations
        .iter()
        .scan(0u64, |acc, d| {
            *acc += ms(*d);
            Some(*acc)
        })
        .filter(|&b| b > 0 && b < work)
        .collect();
    boundaries.dedup();

    let nonconvergence = |progress: u64| SimError::Nonconvergence {
        horizon: Duration::from_millis(cap),
        progress: Duration::from_millis(progress),
        work: Duration::from_millis(work),
    };

    let mut t: u64 = 0;
    let mut progress: u64 = 0;
    let mut committed: u64 = 0;
    let mut next_evict = evict_every;
    let mut next_due = tau;
    let mut evictions = 0u64;
    let mut lost = 0u64;
    let mut taken = 0u64;

    let makespan = loop {
        if t > cap {
            return Err(nonconvergence(progress));
        }
        let t_done = t + (work - progress);
        let t_ckpt = match params.checkpoint_policy {
            CheckpointPolicy::Periodic(_) => next_due,
            CheckpointPolicy::BoundaryOnly => boundaries
                .iter()
                .find(|&&b| b > progress)
                .map_or(u64::MAX, |b| t + (b - progress)),
            CheckpointPolicy::None => u64::MAX,
        };
        if t_done <= t_ckpt && t_done <= next_evict {
            break t_done;
        }
        if t_ckpt <= next_evict {
            progress += t_ckpt - t;
            t = t_ckpt;
            let commit_at = t.saturating_add(c);
            if commit_at <= next_evict {
                committed = progress;
                taken += 1;
                t = commit_at;
                next_due = t.saturating_add(tau);
                continue;
            }
        } else {
            progress += next_evict - t;
        }
        // Eviction at `next_evict`, possibly repeated while reprovisioning.
        t = next_evict;
        loop {
            evictions += 1;
            lost += progress - committed;
            progress = committed;
            next_evict = next_evict.saturating_add(evict_every);
            let resume_done = t + p + if committed > 0 { r } else { 0 };
            if resume_done <= next_evict {
                t = resume_done;
                next_due = t.saturating_add(tau);
                break;
            }
            t = next_evict;
            if t > cap {
                return Err(nonconvergence(progress));
            }
        }
    };
    if makespan > cap {
        return Err(nonconvergence(work));
    }
    let makespan = Duration::from_millis(makespan);
    Ok(SimResult {
        makespan,
        evictions,
        lost_work: Duration::from_millis(lost),
        checkpoints_taken: taken,
        spot_cost: cost(makespan, pricing.spot_rate),
        on_demand_cost: cost(makespan, pricing.on_demand_rate),
    })
}
