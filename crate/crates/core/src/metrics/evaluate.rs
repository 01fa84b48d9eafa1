use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::counts::{count_universe, PairStats};
use super::operating::{operating_point, selection_size, OperatingPoint};
use crate::error::{Error, Result};
use crate::simsel::{score_indexed, PairBlock, PairUniverse, SelectionState, TopPairs, DEFAULT_BLOCK_SIZE};
use crate::types::{check_pairing, EmbeddingSet, Group, Manifest, ProtocolSpec, UNIT_NORM_TOLERANCE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub pair_stats: PairStats,
    pub entries: Vec<OperatingPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub image_a: String,
    pub image_b: String,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: String,
    pub pair_stats: PairStats,
    pub entries: Vec<OperatingPoint>,
    /// Per-group results; both endpoints of every pair lie in the group.
    pub groups: BTreeMap<String, GroupReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub top_negative_pairs: Vec<PairRecord>,
}

impl MetricReport {
    pub fn entry(&self, fpr_target: f64) -> Option<&OperatingPoint> {
        self.entries.iter().find(|e| e.fpr_target == fpr_target)
    }

    pub fn group_entry(&self, group: Group, fpr_target: f64) -> Option<&OperatingPoint> {
        self.groups
            .get(group.label())?
            .entries
            .iter()
            .find(|e| e.fpr_target == fpr_target)
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub block_size: usize,
    pub workers: usize,
    /// Keep this many highest-scoring negative pairs in the report.
    pub top_pairs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            block_size: DEFAULT_BLOCK_SIZE,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            top_pairs: 0,
        }
    }
}

struct Scope {
    stats: PairStats,
    k: usize,
}

struct ScopeAcc {
    positives: Vec<f32>,
    negatives: SelectionState,
}

impl ScopeAcc {
    fn new(k: usize) -> Self {
        ScopeAcc {
            positives: Vec::new(),
            negatives: SelectionState::new(k).expect("k >= 1"),
        }
    }

    fn merge(&mut self, other: ScopeAcc) {
        self.positives.extend(other.positives);
        self.negatives.merge(other.negatives).expect("same k");
    }
}

struct WorkerAcc {
    main: ScopeAcc,
    groups: [Option<ScopeAcc>; 4],
    top: TopPairs,
}

const NO_GROUP: u8 = u8::MAX;

/// Scores every pair of the protocol and reports TPR at each FPR target.
///
/// Positive scores are kept exactly; negatives only pass through per-worker
/// top-k buffers. The result does not depend on `block_size` or `workers`.
pub fn evaluate(
    set: &EmbeddingSet,
    manifest: &Manifest,
    protocol: &ProtocolSpec,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    protocol.validate()?;
    check_pairing(manifest, set)?;
    set.check_normalized(UNIT_NORM_TOLERANCE)?;
    if opts.block_size == 0 || opts.workers == 0 {
        return Err(Error::Protocol("block size and workers must be positive".into()));
    }

    let universe = PairUniverse::resolve(manifest, protocol)?;
    let main_stats = count_universe(manifest, &universe);
    if main_stats.n_positive == 0 {
        return Err(Error::EmptyPositives);
    }
    if main_stats.n_negative_engine == 0 {
        return Err(Error::EmptyNegatives);
    }
    let scope = |stats: PairStats| Scope {
        stats,
        k: selection_size(&protocol.fpr_targets, stats.n_negative_engine),
    };
    let main = scope(main_stats);

    let group_of: Vec<u8> = manifest
        .records()
        .iter()
        .map(|r| r.group.demographic_index().map_or(NO_GROUP, |g| g as u8))
        .collect();
    // Groups without both kinds of pairs have no defined operating point.
    let groups: [Option<Scope>; 4] = std::array::from_fn(|g| {
        if !protocol.group_breakdown {
            return None;
        }
        let sub = universe.restrict(|r| group_of[r as usize] == g as u8);
        let stats = count_universe(manifest, &sub);
        (stats.n_positive > 0 && stats.n_negative_engine > 0).then(|| scope(stats))
    });

    let blocks: Vec<PairBlock> = universe.blocks(opts.block_size).collect();
    let ident = manifest.identity_index();
    let side = |rows: &[u32]| -> (Vec<u32>, Vec<u8>) {
        rows.iter()
            .map(|&r| (ident[r as usize], group_of[r as usize]))
            .unzip()
    };
    let (id_a, grp_a) = side(universe.side_a());
    let (id_b, grp_b) = side(universe.side_b());

    let new_acc = || WorkerAcc {
        main: ScopeAcc::new(main.k),
        groups: std::array::from_fn(|g| groups[g].as_ref().map(|s| ScopeAcc::new(s.k))),
        top: TopPairs::new(opts.top_pairs),
    };

    let next = AtomicUsize::new(0);
    let worker = || {
        let mut acc = new_acc();
        let mut scores = Vec::new();
        loop {
            let idx = next.fetch_add(1, Ordering::Relaxed);
            let Some(block) = blocks.get(idx) else {
                break;
            };
            let a = &universe.side_a()[block.rows.clone()];
            let b = &universe.side_b()[block.cols.clone()];
            score_indexed(set, a, b, &mut scores);
            let nc = b.len();
            for (i, ap) in block.rows.clone().enumerate() {
                let (ida, ga) = (id_a[ap], grp_a[ap]);
                let row = &scores[i * nc..(i + 1) * nc];
                let first = block.first_col(i);
                for (j, &s) in row.iter().enumerate().skip(first) {
                    let bp = block.cols.start + j;
                    let same_group = ga != NO_GROUP && ga == grp_b[bp];
                    let sub = if same_group {
                        acc.groups[ga as usize].as_mut()
                    } else {
                        None
                    };
                    if ida == id_b[bp] {
                        acc.main.positives.push(s);
                        if let Some(g) = sub {
                            g.positives.push(s);
                        }
                    } else {
                        acc.main.negatives.push(s);
                        if let Some(g) = sub {
                            g.negatives.push(s);
                        }
                        if opts.top_pairs > 0 {
                            acc.top.push(s, a[i], b[j]);
                        }
                    }
                }
            }
        }
        acc
    };

    let workers = opts.workers.min(blocks.len().max(1));
    let mut partials: Vec<WorkerAcc> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers).map(|_| s.spawn(worker)).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });

    let mut total = partials.remove(0);
    for p in partials {
        total.main.merge(p.main);
        for (mine, theirs) in total.groups.iter_mut().zip(p.groups) {
            if let (Some(m), Some(t)) = (mine.as_mut(), theirs) {
                m.merge(t);
            }
        }
        total.top.merge(p.top);
    }

    let entries_for = |acc: &ScopeAcc, stats: &PairStats| -> Vec<OperatingPoint> {
        assert_eq!(acc.positives.len() as u64, stats.n_positive);
        assert_eq!(acc.negatives.seen(), stats.n_negative_engine);
        let top = acc.negatives.sorted_desc();
        protocol
            .fpr_targets
            .iter()
            .map(|&t| operating_point(&acc.positives, &top, stats.n_negative_engine, t))
            .collect()
    };

    let mut group_reports = BTreeMap::new();
    for (g, scope) in groups.iter().enumerate() {
        if let (Some(scope), Some(acc)) = (scope, total.groups[g].as_ref()) {
            group_reports.insert(
                Group::DEMOGRAPHIC[g].label().to_string(),
                GroupReport {
                    pair_stats: scope.stats,
                    entries: entries_for(acc, &scope.stats),
                },
            );
        }
    }

    let records = manifest.records();
    Ok(MetricReport {
        protocol: protocol.name.clone(),
        pair_stats: main.stats,
        entries: entries_for(&total.main, &main.stats),
        groups: group_reports,
        top_negative_pairs: total
            .top
            .into_sorted()
            .into_iter()
            .map(|p| PairRecord {
                image_a: records[p.a as usize].image_id.clone(),
                image_b: records[p.b as usize].image_id.clone(),
                score: p.score,
            })
            .collect(),
    })
}
