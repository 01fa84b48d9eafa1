use std::collections::BTreeMap;
use std::io::Write;

use pairbench_core::gate::{MeasuredProfile, Verdict};
use pairbench_core::metrics::LeaderboardEntry;
use pairbench_harness::store::{Event, Payload, State, Store, SubmitRequest};
use pairbench_harness::HarnessError;

fn request(participant: &str) -> SubmitRequest {
    SubmitRequest {
        participant: participant.into(),
        subtrack: "ms1m".into(),
        declared_dim: 512,
        model_bytes: 1 << 20,
        digest: String::new(),
        payload: Payload::Extractor { name: "toy".into() },
    }
}

fn entry(participant: &str, mask: f64, mr_all: f64) -> LeaderboardEntry {
    LeaderboardEntry {
        participant: participant.into(),
        tpr_mask: mask,
        tpr_children: None,
        tpr_african: None,
        tpr_caucasian: None,
        tpr_south_asian: None,
        tpr_east_asian: None,
        tpr_mr_all: mr_all,
        size_mb: 1.0,
        time_ms: 1.0,
        feat_dim: 512,
        weighted_score: 0.0,
    }
    .scored()
}

fn done(id: u64, e: LeaderboardEntry) -> Event {
    Event::Done {
        id,
        verdict: Verdict {
            pass: true,
            reasons: vec![],
        },
        profile: MeasuredProfile::reported(1.0),
        reports: BTreeMap::from([("masked".to_string(), format!("reports/{id}-masked.json"))]),
        entry: e,
    }
}

fn finish(store: &mut Store, participant: &str, mask: f64, mr_all: f64) -> u64 {
    let id = store.submit(request(participant)).unwrap();
    store.append(Event::Started { id }).unwrap();
    store.append(done(id, entry(participant, mask, mr_all))).unwrap();
    id
}

#[test]
fn reopen_replays_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let before: Vec<_> = {
        let mut s = Store::open(dir.path()).unwrap();
        finish(&mut s, "a", 80.0, 90.0);
        let id = s.submit(request("b")).unwrap();
        s.append(Event::Started { id }).unwrap();
        s.submit(request("c")).unwrap();
        s.records().cloned().collect()
    };
    let s = Store::open(dir.path()).unwrap();
    let after: Vec<_> = s.records().cloned().collect();
    assert_eq!(before, after);
    assert_eq!(s.unfinished(), vec![2, 3]);
    assert_eq!(s.record(2).unwrap().state, State::Running);
}

#[test]
fn transitions_apply_once() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Store::open(dir.path()).unwrap();
    let id = s.submit(request("a")).unwrap();
    // Done before Started is not a legal transition.
    s.append(done(id, entry("a", 1.0, 1.0))).unwrap();
    assert_eq!(s.record(id).unwrap().state, State::Queued);
    s.append(Event::Started { id }).unwrap();
    s.append(Event::Started { id }).unwrap();
    s.append(done(id, entry("a", 80.0, 90.0))).unwrap();
    s.append(Event::Failed {
        id,
        error: "late".into(),
        verdict: None,
        profile: None,
    })
    .unwrap();
    let r = s.record(id).unwrap();
    assert_eq!(r.state, State::Done);
    assert_eq!(r.error, None);
    assert_eq!(r.entry.as_ref().unwrap().tpr_mask, 80.0);
}

#[test]
fn partial_trailing_line_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut s = Store::open(dir.path()).unwrap();
        finish(&mut s, "a", 80.0, 90.0);
    }
    let log = dir.path().join("events.jsonl");
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(br#"{"seq":4,"event":"star"#).unwrap();
    drop(f);

    let mut s = Store::open(dir.path()).unwrap();
    assert_eq!(s.record(1).unwrap().state, State::Done);
    let id = s.submit(request("b")).unwrap();
    assert_eq!(id, 2);
    drop(s);
    let s = Store::open(dir.path()).unwrap();
    assert_eq!(s.records().count(), 2);
}

#[test]
fn corrupt_complete_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut s = Store::open(dir.path()).unwrap();
        s.submit(request("a")).unwrap();
    }
    let log = dir.path().join("events.jsonl");
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(b"not json\n").unwrap();
    drop(f);
    match Store::open(dir.path()) {
        Err(HarnessError::CorruptLog { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected corrupt log, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn snapshot_and_log_overlap_is_harmless() {
    let dir = tempfile::tempdir().unwrap();
    let before: Vec<_> = {
        let mut s = Store::open_with(dir.path(), 2).unwrap();
        for (i, p) in ["a", "b", "c", "d"].iter().enumerate() {
            finish(&mut s, p, 70.0 + i as f64, 80.0);
        }
        s.submit(request("e")).unwrap();
        s.records().cloned().collect()
    };
    assert!(dir.path().join("snapshot.json").exists());
    let s = Store::open(dir.path()).unwrap();
    assert_eq!(s.records().cloned().collect::<Vec<_>>(), before);

    // A snapshot alone, with the log lost, still restores what it covered.
    std::fs::remove_file(dir.path().join("events.jsonl")).unwrap();
    let s = Store::open(dir.path()).unwrap();
    assert!(s.records().count() >= 4);
    assert_eq!(s.record(4).unwrap().state, State::Done);
}

#[test]
fn leaderboard_keeps_best_per_participant() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Store::open(dir.path()).unwrap();
    let first = finish(&mut s, "a", 80.0, 90.0);
    finish(&mut s, "a", 70.0, 85.0);
    let tie = finish(&mut s, "a", 80.0, 90.0);
    finish(&mut s, "b", 90.0, 91.0);
    let queued = s.submit(request("c")).unwrap();
    let rows = s.leaderboard("ms1m");
    assert_eq!(rows.iter().map(|e| e.participant.as_str()).collect::<Vec<_>>(), ["b", "a"]);
    assert_eq!(rows[1].weighted_score, 87.5);
    assert!(first < tie && queued > tie);
    assert!(s.leaderboard("glint360k").is_empty());
}
