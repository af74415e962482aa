//! The Scheduled-Events document model and preemption detection.
//!
//! Wire shape (field order is preserved on output):
//!
//! ```json
//! {"DocumentIncarnation": 2, "Events": [{"EventId": "…", "EventStatus": "Scheduled",
//!   "EventType": "Preempt", "ResourceType": "VirtualMachine", "Resources": ["vm0"],
//!   "NotBefore": "Mon, 19 Sep 2016 18:29:47 GMT"}]}
//! ```

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::time::Timestamp;

/// Notice the platform promises before a preemption.
pub const MIN_NOTICE: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventType {
    Preempt,
    Reboot,
    Redeploy,
    Freeze,
    Terminate,
    /// Anything else the service may announce; kept verbatim.
    Other(String),
}

impl EventType {
    pub fn as_str(&self) -> &str {
        match self {
            EventType::Preempt => "Preempt",
            EventType::Reboot => "Reboot",
            EventType::Redeploy => "Redeploy",
            EventType::Freeze => "Freeze",
            EventType::Terminate => "Terminate",
            EventType::Other(s) => s,
        }
    }
}

impl From<&str> for EventType {
    fn from(s: &str) -> Self {
        match s {
            "Preempt" => EventType::Preempt,
            "Reboot" => EventType::Reboot,
            "Redeploy" => EventType::Redeploy,
            "Freeze" => EventType::Freeze,
            "Terminate" => EventType::Terminate,
            other => EventType::Other(other.to_string()),
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EventType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EventType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(EventType::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct EvictionEvent {
    pub event_id: String,
    pub event_status: String,
    pub event_type: EventType,
    #[serde(default = "default_resource_type")]
    pub resource_type: String,
    #[serde(default)]
    pub resources: Vec<String>,
    /// Raw RFC-1123 text; see [`EvictionEvent::deadline`].
    #[serde(default)]
    pub not_before: String,
}

fn default_resource_type() -> String {
    "VirtualMachine".to_string()
}

impl EvictionEvent {
    pub fn deadline(&self) -> Option<Timestamp> {
        Timestamp::parse_rfc1123(&self.not_before)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct EventsDocument {
    pub document_incarnation: u64,
    #[serde(default)]
    pub events: Vec<EvictionEvent>,
}

impl EventsDocument {
    pub fn from_json(body: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(body)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("document serializes")
    }
}

/// A detected preemption and the moment it must be acted upon by.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictionNotice {
    pub event_id: String,
    pub deadline: Timestamp,
    pub detected_at: Timestamp,
}

/// Returns a notice for the earliest-deadline `Preempt` event, if any.
///
/// A `NotBefore` that fails to parse is treated as already due
/// (`deadline = detected_at`). Ties on the deadline go to the smallest
/// event id, so the result does not depend on event order.
pub fn detect_preempt(doc: &EventsDocument, detected_at: Timestamp) -> Option<EvictionNotice> {
    doc.events
        .iter()
        .filter(|e| e.event_type == EventType::Preempt)
        .map(|e| EvictionNotice {
            event_id: e.event_id.clone(),
            deadline: e.deadline().unwrap_or(detected_at),
            detected_at,
        })
        .min_by(|a, b| a.deadline.cmp(&b.deadline).then_with(|| a.event_id.cmp(&b.event_id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoticeBudget {
    pub budget: Duration,
    /// The notice was shorter than the promised floor.
    pub below_floor: bool,
}

/// Time left before the deadline, against the default 30 s floor.
pub fn notice_budget(notice: &EvictionNotice, now: Timestamp) -> NoticeBudget {
    notice_budget_with_floor(notice, now, MIN_NOTICE)
}

pub fn notice_budget_with_floor(notice: &EvictionNotice, now: Timestamp, floor: Duration) -> NoticeBudget {
    let budget = notice.deadline.saturating_since(now);
    NoticeBudget { budget, below_floor: budget < floor }
}
