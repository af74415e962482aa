mod support;

use std::time::Duration;

use spoton::mock::{MockOptions, MockServer};

#[test]
fn conformance() {
    for (name, outcome) in support::mock_conformance() {
        assert_eq!(outcome, Ok(()), "{name}");
    }
}

#[test]
fn kill_lands_in_the_second_after_not_before() {
    support::kill_timing(Duration::from_millis(1200)).unwrap();
}

#[test]
fn planned_triggers_collapse_while_one_is_pending() {
    let opts = MockOptions { kill: false, min_notice: Duration::from_millis(1500), ..Default::default() };
    let mock = MockServer::start("127.0.0.1:0".parse().unwrap(), opts).unwrap();
    mock.schedule_evictions(vec![
        (Duration::from_millis(100), Duration::ZERO),
        (Duration::from_millis(300), Duration::ZERO),
    ])
    .unwrap();
    std::thread::sleep(Duration::from_millis(600));
    let s = mock.state();
    assert_eq!(s.triggered, 1);
    assert!(s.pending.is_some());
    assert!(mock.wait_until_clear(Duration::from_secs(5)));
    let s = mock.state();
    assert_eq!(s.kills.len(), 1);
    assert!(!s.kills[0].delivered);
}

#[test]
fn admin_endpoints_over_http() {
    let mock = MockServer::start("127.0.0.1:0".parse().unwrap(), MockOptions { kill: false, ..Default::default() }).unwrap();
    let out = support::spoton(&["mock-evict", "--base", &mock.base_url(), "--delay", "45", "--register", "4242", "--json"]);
    assert!(out.status.success(), "{out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = mock.state();
    assert_eq!(s.target, Some(4242));
    assert_eq!(v["event_id"].as_str(), s.pending.as_ref().map(|e| e.event_id.as_str()));
    // a second trigger is refused
    let again = support::spoton(&["mock-evict", "--base", &mock.base_url()]);
    assert!(!again.status.success());
    assert_eq!(mock.state().rejected, 1);
}
