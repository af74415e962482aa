//! Coordinator decisions that do not depend on IO.

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::time::Duration;

use crate::eviction::EvictionNotice;
use crate::time::Timestamp;

/// A termination checkpoint is attempted only when the notice budget covers
/// this multiple of the expected snapshot time.
pub const SAFETY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    TerminationCheckpointThenStop,
    StopWithoutCheckpoint,
    /// Start nothing new: the in-flight checkpoint becomes the terminal one.
    Ignore,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::TerminationCheckpointThenStop => "termination_checkpoint_then_stop",
            Action::StopWithoutCheckpoint => "stop_without_checkpoint",
            Action::Ignore => "ignore",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionPlan {
    pub action: Action,
    pub reason: String,
}

/// Decides how to react to a preemption notice.
pub fn on_eviction_notice(
    notice: &EvictionNotice,
    inflight: bool,
    estimate: Duration,
    now: Timestamp,
) -> ActionPlan {
    let budget = notice.deadline.saturating_since(now);
    let needed = estimate.mul_f64(SAFETY_FACTOR);
    if inflight {
        return ActionPlan {
            action: Action::Ignore,
            reason: format!(
                "checkpoint already in flight; awaiting it as terminal (budget {} ms)",
                budget.as_millis()
            ),
        };
    }
    if budget >= needed {
        ActionPlan {
            action: Action::TerminationCheckpointThenStop,
            reason: format!("budget {} ms covers {} ms", budget.as_millis(), needed.as_millis()),
        }
    } else {
        ActionPlan {
            action: Action::StopWithoutCheckpoint,
            reason: format!(
                "opportunistic checkpoint skipped: budget {} ms below {} ms",
                budget.as_millis(),
                needed.as_millis()
            ),
        }
    }
}

/// Next periodic checkpoint time. Instants are offsets from any fixed origin.
/// A missed slot yields `now`: at most one immediate checkpoint, no burst.
pub fn schedule_next_checkpoint(last_completed: Duration, interval: Duration, now: Duration) -> Duration {
    debug_assert!(!interval.is_zero(), "checkpoint interval must be positive");
    let due = last_completed.saturating_add(interval);
    if due < now {
        now
    } else {
        due
    }
}

/// Running snapshot-duration estimate: the configured value until the first
/// observation, then the maximum observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotEstimate {
    configured: Duration,
    observed_max: Option<Duration>,
}

impl SnapshotEstimate {
    pub fn new(configured: Duration) -> Self {
        SnapshotEstimate { configured, observed_max: None }
    }

    pub fn observe(&mut self, took: Duration) {
        self.observed_max = Some(self.observed_max.map_or(took, |m| m.max(took)));
    }

    pub fn current(&self) -> Duration {
        self.observed_max.unwrap_or(self.configured)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    const NOW: Timestamp = Timestamp::from_secs(1_000_000);

    fn notice_in(secs: u64) -> EvictionNotice {
        EvictionNotice {
            event_id: "e".to_string(),
            deadline: NOW + Duration::from_secs(secs),
            detected_at: NOW,
        }
    }

    #[test]
    fn enough_budget_takes_termination_checkpoint() {
        let plan = on_eviction_notice(&notice_in(45), false, Duration::from_secs(20), NOW);
        assert_eq!(plan.action, Action::TerminationCheckpointThenStop);
    }

    #[test]
    fn short_budget_stops_without_checkpoint() {
        let plan = on_eviction_notice(&notice_in(5), false, Duration::from_secs(20), NOW);
        assert_eq!(plan.action, Action::StopWithoutCheckpoint);
        assert!(plan.reason.contains("opportunistic"));
    }

    #[test]
    fn inflight_checkpoint_is_awaited() {
        let plan = on_eviction_notice(&notice_in(45), true, Duration::from_secs(20), NOW);
        assert_eq!(plan.action, Action::Ignore);
        let plan = on_eviction_notice(&notice_in(1), true, Duration::from_secs(20), NOW);
        assert_eq!(plan.action, Action::Ignore);
    }

    #[test]
    fn safety_factor_boundary() {
        // 30 s covers 20 s × 1.5 exactly; 29 s does not.
        let est = Duration::from_secs(20);
        assert_eq!(on_eviction_notice(&notice_in(30), false, est, NOW).action, Action::TerminationCheckpointThenStop);
        assert_eq!(on_eviction_notice(&notice_in(29), false, est, NOW).action, Action::StopWithoutCheckpoint);
    }

    #[test]
    fn past_deadline_has_no_budget() {
        let plan = on_eviction_notice(&notice_in(10), false, Duration::ZERO, NOW + Duration::from_secs(20));
        // zero estimate: even a zero budget suffices
        assert_eq!(plan.action, Action::TerminationCheckpointThenStop);
        let plan = on_eviction_notice(&notice_in(10), false, Duration::from_millis(1), NOW + Duration::from_secs(20));
        assert_eq!(plan.action, Action::StopWithoutCheckpoint);
    }

    #[test]
    fn schedule_examples() {
        let s = Duration::from_secs;
        assert_eq!(schedule_next_checkpoint(s(100), s(600), s(150)), s(700));
        assert_eq!(schedule_next_checkpoint(s(100), s(600), s(800)), s(800));
        assert_eq!(schedule_next_checkpoint(s(0), s(900), s(0)), s(900));
        assert_eq!(schedule_next_checkpoint(s(100), s(600), s(700)), s(700));
    }

    #[test]
    fn estimate_tracks_max_observed() {
        let mut e = SnapshotEstimate::new(Duration::from_secs(5));
        assert_eq!(e.current(), Duration::from_secs(5));
        e.observe(Duration::from_millis(200));
        assert_eq!(e.current(), Duration::from_millis(200));
        e.observe(Duration::from_millis(900));
        e.observe(Duration::from_millis(100));
        assert_eq!(e.current(), Duration::from_millis(900));
    }
}
