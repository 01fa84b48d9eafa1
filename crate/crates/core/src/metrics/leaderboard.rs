use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One leaderboard row. TPRs are percentages with three decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub participant: String,
    pub tpr_mask: f64,
    #[serde(default)]
    pub tpr_children: Option<f64>,
    #[serde(default)]
    pub tpr_african: Option<f64>,
    #[serde(default)]
    pub tpr_caucasian: Option<f64>,
    #[serde(default)]
    pub tpr_south_asian: Option<f64>,
    #[serde(default)]
    pub tpr_east_asian: Option<f64>,
    pub tpr_mr_all: f64,
    pub size_mb: f64,
    pub time_ms: f64,
    pub feat_dim: u32,
    #[serde(default)]
    pub weighted_score: f64,
}

impl LeaderboardEntry {
    /// Recomputes `weighted_score` from the two ranked TPRs.
    pub fn scored(mut self) -> Self {
        self.weighted_score = weighted_score(self.tpr_mask, self.tpr_mr_all);
        self
    }

    fn score_key(&self) -> i64 {
        milli(self.tpr_mask) + 3 * milli(self.tpr_mr_all)
    }
}

fn milli(percent: f64) -> i64 {
    (percent * 1000.0).round() as i64
}

/// `0.25 * tpr_mask + 0.75 * tpr_mr_all`.
///
/// Inputs carry three decimals, so the sum is formed exactly in integer
/// thousandths and divided once; the result is the double nearest to the
/// exact value.
pub fn weighted_score(tpr_mask: f64, tpr_mr_all: f64) -> f64 {
    (milli(tpr_mask) + 3 * milli(tpr_mr_all)) as f64 / 4000.0
}

/// Sorts by descending weighted score; ties keep their input order.
pub fn rank_leaderboard(entries: Vec<LeaderboardEntry>) -> Vec<LeaderboardEntry> {
    let mut scored: Vec<LeaderboardEntry> = entries.into_iter().map(LeaderboardEntry::scored).collect();
    scored.sort_by_key(|e| std::cmp::Reverse(e.score_key()));
    scored
}

/// Fixed-width table in leaderboard column order, plus the weighted score.
pub fn render_table(ranked: &[LeaderboardEntry]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:<16} {:>8} {:>8} {:>8} {:>9} {:>11} {:>10} {:>8} {:>9} {:>9} {:>8} {:>9}",
        "Rank",
        "Participant",
        "Mask",
        "Children",
        "African",
        "Caucasian",
        "SouthAsian",
        "EastAsian",
        "MR-All",
        "Size(MB)",
        "Time(ms)",
        "FeatDim",
        "Weighted"
    );
    for (i, e) in ranked.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>4}  {:<16} {:>8.3} {:>8} {:>8} {:>9} {:>11} {:>10} {:>8.3} {:>9.3} {:>9.3} {:>8} {:>9.5}",
            i + 1,
            e.participant,
            e.tpr_mask,
            opt(e.tpr_children),
            opt(e.tpr_african),
            opt(e.tpr_caucasian),
            opt(e.tpr_south_asian),
            opt(e.tpr_east_asian),
            e.tpr_mr_all,
            e.size_mb,
            e.time_ms,
            e.feat_dim,
            e.weighted_score
        );
    }
    out
}
