#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pairbench_core::metrics::LeaderboardEntry;

pub const PROTOCOLS: [&str; 3] = ["masked", "mr_all", "children"];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn bench_manifest() -> PathBuf {
    fixtures().join("bench/manifest.jsonl")
}

pub fn bench_embeddings() -> PathBuf {
    fixtures().join("bench/embeddings.bin")
}

/// Published leaderboard rows in rank order.
pub fn table(subtrack: &str) -> Vec<LeaderboardEntry> {
    let path = fixtures().join(format!("leaderboard_{subtrack}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn sha256(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}
