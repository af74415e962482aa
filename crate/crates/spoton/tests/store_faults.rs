mod support;

use proptest::prelude::*;
use spoton::store::{CheckpointMeta, Store, COMMIT_FILE, PAYLOAD_FILE};
use spoton_core::checkpoint::{CheckpointKind, ProgressMarker};

fn meta() -> CheckpointMeta {
    CheckpointMeta {
        kind: CheckpointKind::Termination,
        attempt_id: 3,
        progress_marker: ProgressMarker { stage: "K55".into(), step: 12 },
    }
}

#[test]
fn crash_on_empty_store_leaves_nothing_valid() {
    assert_eq!(support::crash_sweep(b"0123456789", 0), Ok(10));
}

#[test]
fn empty_payload_survives_every_crash_point() {
    assert_eq!(support::crash_sweep(b"", 1), Ok(10));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn latest_valid_is_always_a_committed_checkpoint(
        payload in prop::collection::vec(any::<u8>(), 0..4096),
        prior in 0usize..3,
    ) {
        prop_assert_eq!(support::crash_sweep(&payload, prior), Ok(10));
    }

    #[test]
    fn damaged_newest_falls_back_to_older(payload in prop::collection::vec(any::<u8>(), 1..512), at in any::<prop::sample::Index>()) {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::open(tmp.path()).unwrap();
        let old = store.write_checkpoint(b"older", &meta()).unwrap();
        let new = store.write_checkpoint(&payload, &meta()).unwrap();
        let path = store.checkpoint_dir(new.sequence).join(PAYLOAD_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        let i = at.index(bytes.len());
        bytes[i] ^= 0x5a;
        std::fs::write(&path, &bytes).unwrap();
        let latest = store.latest_valid().unwrap();
        prop_assert_eq!(latest.sequence, old.sequence);
        prop_assert_eq!(store.read_payload(&latest).unwrap(), b"older".to_vec());
    }
}

#[test]
fn manifest_carries_what_the_writer_knew() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::open(tmp.path()).unwrap();
    let m = store.write_checkpoint(b"abc", &meta()).unwrap();
    let read = store.read_manifest(m.sequence).unwrap();
    assert_eq!(read, m);
    assert_eq!(read.kind, CheckpointKind::Termination);
    assert_eq!(read.attempt_id, 3);
    assert_eq!(read.progress_marker, ProgressMarker { stage: "K55".into(), step: 12 });
    assert_eq!(read.payload_size, 3);
}

#[test]
fn sequences_keep_rising_after_retention_and_deletion() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::open(tmp.path()).unwrap();
    for _ in 0..5 {
        store.write_checkpoint(b"x", &meta()).unwrap();
    }
    assert_eq!(store.sequences(), [4, 5]);
    std::fs::remove_file(store.checkpoint_dir(5).join(COMMIT_FILE)).unwrap();
    assert_eq!(store.latest_valid().unwrap().sequence, 4);
    assert_eq!(store.write_checkpoint(b"y", &meta()).unwrap().sequence, 6);
}
