//! Append-only submission store.
//!
//! Every state change is one JSON line in `events.jsonl`, fsynced before
//! the change becomes visible. `snapshot.json` periodically captures the
//! folded state together with the sequence number it covers; opening the
//! store loads the snapshot and replays the newer lines. Applying an event
//! twice is harmless, so a crash between snapshot and log never duplicates
//! anything.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pairbench_core::gate::{MeasuredProfile, Verdict};
use pairbench_core::metrics::{rank_leaderboard, LeaderboardEntry};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

const LOG_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";
const REPORT_DIR: &str = "reports";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    Queued,
    Running,
    Done,
    Failed,
    Gated,
}

impl State {
    pub fn is_terminal(self) -> bool {
        matches!(self, State::Done | State::Failed | State::Gated)
    }

    fn can_become(self, next: State) -> bool {
        matches!(
            (self, next),
            (State::Queued, State::Running) | (State::Running, State::Done | State::Failed | State::Gated)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    /// Precomputed embeddings for the benchmark manifest, in manifest order.
    Embeddings { path: PathBuf, ms_per_image: f64 },
    /// A model registered with the service by name.
    Extractor { name: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub participant: String,
    pub subtrack: String,
    pub declared_dim: u32,
    pub model_bytes: u64,
    #[serde(default)]
    pub digest: String,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub id: u64,
    pub participant: String,
    pub subtrack: String,
    pub submitted_at_ms: u64,
    pub state: State,
    pub request: SubmitRequest,
    #[serde(default)]
    pub verdict: Option<Verdict>,
    #[serde(default)]
    pub profile: Option<MeasuredProfile>,
    /// Protocol name to report file, relative to the store directory.
    #[serde(default)]
    pub reports: BTreeMap<String, String>,
    #[serde(default)]
    pub entry: Option<LeaderboardEntry>,
    #[serde(default)]
    pub error: Option<String>,
}

impl SubmissionRecord {
    pub fn weighted_score(&self) -> Option<f64> {
        self.entry.as_ref().map(|e| e.weighted_score)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Submitted {
        record: Box<SubmissionRecord>,
    },
    Started {
        id: u64,
    },
    Gated {
        id: u64,
        verdict: Verdict,
        profile: MeasuredProfile,
    },
    Done {
        id: u64,
        verdict: Verdict,
        profile: MeasuredProfile,
        reports: BTreeMap<String, String>,
        entry: LeaderboardEntry,
    },
    Failed {
        id: u64,
        error: String,
        #[serde(default)]
        verdict: Option<Verdict>,
        #[serde(default)]
        profile: Option<MeasuredProfile>,
    },
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    records: Vec<SubmissionRecord>,
}

pub struct Store {
    dir: PathBuf,
    log: File,
    seq: u64,
    records: BTreeMap<u64, SubmissionRecord>,
    snapshot_every: u64,
    since_snapshot: u64,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Store> {
        Self::open_with(dir, DEFAULT_SNAPSHOT_EVERY)
    }

    pub fn open_with(dir: impl Into<PathBuf>, snapshot_every: u64) -> Result<Store> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join(REPORT_DIR)).map_err(|e| HarnessError::io(&dir, e))?;
        let mut records = BTreeMap::new();
        let mut seq = 0;
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let text = std::fs::read_to_string(&snap_path).map_err(|e| HarnessError::io(&snap_path, e))?;
            let snap: Snapshot = serde_json::from_str(&text)?;
            seq = snap.seq;
            records = snap.records.into_iter().map(|r| (r.id, r)).collect();
        }

        let log_path = dir.join(LOG_FILE);
        let mut since_snapshot = 0;
        if log_path.exists() {
            let valid_len = trim_partial_line(&log_path)?;
            let file = File::open(&log_path).map_err(|e| HarnessError::io(&log_path, e))?;
            let mut reader = BufReader::new(file).take(valid_len);
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| HarnessError::io(&log_path, e))?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                let parsed: LogLine = serde_json::from_str(line.trim_end()).map_err(|e| HarnessError::CorruptLog {
                    path: log_path.clone(),
                    line: line_no,
                    message: e.to_string(),
                })?;
                if parsed.seq <= seq {
                    continue;
                }
                seq = parsed.seq;
                apply(&mut records, parsed.event);
                since_snapshot += 1;
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| HarnessError::io(&log_path, e))?;
        Ok(Store {
            dir,
            log,
            seq,
            records,
            snapshot_every: snapshot_every.max(1),
            since_snapshot,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, event: Event) -> Result<()> {
        let line = LogLine {
            seq: self.seq + 1,
            event,
        };
        let mut text = serde_json::to_string(&line)?;
        text.push('\n');
        let path = self.dir.join(LOG_FILE);
        self.log
            .write_all(text.as_bytes())
            .and_then(|_| self.log.sync_data())
            .map_err(|e| HarnessError::io(&path, e))?;
        self.seq = line.seq;
        apply(&mut self.records, line.event);
        self.since_snapshot += 1;
        if self.since_snapshot >= self.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the folded state; older log lines stay in place.
    pub fn snapshot(&mut self) -> Result<()> {
        let snap = Snapshot {
            seq: self.seq,
            records: self.records.values().cloned().collect(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let target = self.dir.join(SNAPSHOT_FILE);
        let write = || -> std::io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(serde_json::to_string(&snap)?.as_bytes())?;
            f.sync_all()?;
            std::fs::rename(&tmp, &target)
        };
        write().map_err(|e| HarnessError::io(&target, e))?;
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn submit(&mut self, request: SubmitRequest) -> Result<u64> {
        let id = self.records.keys().next_back().map_or(1, |k| k + 1);
        let record = SubmissionRecord {
            id,
            participant: request.participant.clone(),
            subtrack: request.subtrack.clone(),
            submitted_at_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
            state: State::Queued,
            request,
            verdict: None,
            profile: None,
            reports: BTreeMap::new(),
            entry: None,
            error: None,
        };
        self.append(Event::Submitted { record: Box::new(record) })?;
        Ok(id)
    }

    /// Stores a report body and returns its path relative to the store.
    pub fn write_report(&self, id: u64, protocol: &str, body: &str) -> Result<String> {
        let rel = format!("{REPORT_DIR}/{id}-{protocol}.json");
        let path = self.dir.join(&rel);
        std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
        Ok(rel)
    }

    pub fn read_report(&self, rel: &str) -> Result<String> {
        let path = self.dir.join(rel);
        std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn record(&self, id: u64) -> Option<&SubmissionRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &SubmissionRecord> {
        self.records.values()
    }

    /// Queued or running submissions, oldest first.
    pub fn unfinished(&self) -> Vec<u64> {
        self.records
            .values()
            .filter(|r| !r.state.is_terminal())
            .map(|r| r.id)
            .collect()
    }

    /// Each participant's best finished submission, ranked. Equal scores
    /// keep the earlier submission.
    pub fn leaderboard(&self, subtrack: &str) -> Vec<LeaderboardEntry> {
        let mut best: BTreeMap<&str, &SubmissionRecord> = BTreeMap::new();
        for r in self.records.values() {
            if r.subtrack != subtrack || r.state != State::Done {
                continue;
            }
            let better = best
                .get(r.participant.as_str())
                .is_none_or(|b| r.weighted_score() > b.weighted_score());
            if better {
                best.insert(&r.participant, r);
            }
        }
        let mut rows: Vec<&SubmissionRecord> = best.into_values().collect();
        rows.sort_by_key(|r| r.id);
        rank_leaderboard(rows.into_iter().filter_map(|r| r.entry.clone()).collect())
    }
}

fn apply(records: &mut BTreeMap<u64, SubmissionRecord>, event: Event) {
    let mut transition = |id: u64, next: State, f: &mut dyn FnMut(&mut SubmissionRecord)| {
        if let Some(r) = records.get_mut(&id) {
            if r.state.can_become(next) {
                r.state = next;
                f(r);
            }
        }
    };
    match event {
        Event::Submitted { record } => {
            records.entry(record.id).or_insert(*record);
        }
        Event::Started { id } => transition(id, State::Running, &mut |_| {}),
        Event::Gated { id, verdict, profile } => transition(id, State::Gated, &mut |r| {
            r.verdict = Some(verdict.clone());
            r.profile = Some(profile.clone());
        }),
        Event::Done {
            id,
            verdict,
            profile,
            reports,
            entry,
        } => transition(id, State::Done, &mut |r| {
            r.verdict = Some(verdict.clone());
            r.profile = Some(profile.clone());
            r.reports = reports.clone();
            r.entry = Some(entry.clone());
        }),
        Event::Failed {
            id,
            error,
            verdict,
            profile,
        } => transition(id, State::Failed, &mut |r| {
            r.error = Some(error.clone());
            r.verdict = verdict.clone();
            r.profile = profile.clone();
        }),
    }
}

/// Drops a trailing line left incomplete by a crash mid-append and returns
/// the length of the complete prefix.
fn trim_partial_line(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    if keep < bytes.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| HarnessError::io(path, e))?;
        f.set_len(keep as u64).map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(keep as u64)
}
