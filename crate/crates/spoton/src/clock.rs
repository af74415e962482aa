use std::time::{SystemTime, UNIX_EPOCH};

use spoton_core::Timestamp;

/// Wall-clock now, to the millisecond.
pub fn now() -> Timestamp {
    let since = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    Timestamp::from_millis(since.as_millis() as i64)
}
