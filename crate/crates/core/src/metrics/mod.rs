//! Pair counting, TPR@FPR evaluation, per-group breakdowns and leaderboard
//! ranking.

mod counts;
mod evaluate;
mod leaderboard;
mod operating;

pub use counts::{count_pairs, PairStats};
pub use evaluate::{evaluate, EvalOptions, GroupReport, MetricReport, PairRecord};
pub use leaderboard::{rank_leaderboard, render_table, weighted_score, LeaderboardEntry};
pub use operating::{negatives_allowed, tpr_at_fpr, OperatingPoint};
pub(crate) use operating::percent3;
