//! Exact streaming selection of the k largest scores.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Totally ordered score. `-0.0` is folded into `+0.0` so equal values have
/// one representation.
#[derive(Clone, Copy, Debug)]
struct Score(f32);

impl Score {
    #[inline]
    fn new(v: f32) -> Self {
        Score(v + 0.0)
    }
}

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Bounded top-k buffer over a value stream. After at least `k` values the
/// buffer holds exactly the `k` largest, counted with multiplicity.
#[derive(Clone, Debug)]
pub struct SelectionState {
    k: usize,
    heap: BinaryHeap<Reverse<Score>>,
    floor: f32,
    seen: u64,
}

impl SelectionState {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        Ok(SelectionState {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 20)),
            floor: f32::NEG_INFINITY,
            seen: 0,
        })
    }

    #[inline]
    pub fn push(&mut self, v: f32) {
        self.seen += 1;
        if v > self.floor {
            self.admit(v);
        }
    }

    #[inline(never)]
    fn admit(&mut self, v: f32) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(Score::new(v)));
            if self.heap.len() == self.k {
                self.floor = self.heap.peek().unwrap().0 .0;
            }
        } else {
            *self.heap.peek_mut().unwrap() = Reverse(Score::new(v));
            self.floor = self.heap.peek().unwrap().0 .0;
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// The k-th largest value, once at least `k` values were consumed.
    pub fn kth(&self) -> Option<f32> {
        (self.heap.len() == self.k).then(|| self.heap.peek().unwrap().0 .0)
    }

    pub fn max(&self) -> Option<f32> {
        self.heap.iter().map(|r| r.0).max().map(|s| s.0)
    }

    /// Buffered values, largest first.
    pub fn sorted_desc(&self) -> Vec<f32> {
        let mut v: Vec<Score> = self.heap.iter().map(|r| r.0).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v.into_iter().map(|s| s.0).collect()
    }

    /// Folds `other` in; the result equals one pass over both inputs.
    pub fn merge(&mut self, other: SelectionState) -> Result<()> {
        if other.k != self.k {
            return Err(Error::MismatchedK(self.k, other.k));
        }
        let seen = self.seen + other.seen;
        for Reverse(s) in other.heap {
            self.push(s.0);
        }
        self.seen = seen;
        Ok(())
    }
}

impl PartialEq for SelectionState {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.seen == other.seen
            && self
                .sorted_desc()
                .iter()
                .zip(other.sorted_desc())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.len() == other.len()
    }
}

/// Result of [`select_kth_largest`].
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub kth: f32,
    /// The k largest values, largest first.
    pub top: Vec<f32>,
}

pub fn select_kth_largest(scores: impl IntoIterator<Item = f32>, k: usize) -> Result<Selection> {
    let mut state = SelectionState::new(k)?;
    for s in scores {
        if !s.is_finite() {
            return Err(Error::NonFiniteScore);
        }
        state.push(s);
    }
    let kth = state.kth().ok_or(Error::StreamTooShort {
        k,
        seen: state.seen(),
    })?;
    Ok(Selection {
        kth,
        top: state.sorted_desc(),
    })
}

/// Merges per-worker states. The outcome depends only on the multiset of
/// buffered values, so the merge order does not matter.
pub fn merge_selections(states: impl IntoIterator<Item = SelectionState>) -> Result<SelectionState> {
    let mut iter = states.into_iter();
    let mut acc = iter.next().ok_or(Error::NothingToMerge)?;
    for s in iter {
        acc.merge(s)?;
    }
    Ok(acc)
}

/// A scored pair of manifest rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredPair {
    pub score: f32,
    pub a: u32,
    pub b: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct PairKey(Score, Reverse<u32>, Reverse<u32>);

/// Top-k pairs by score, kept for error analysis. Ties are broken toward
/// smaller row indices so the retained set is deterministic.
#[derive(Clone, Debug)]
pub struct TopPairs {
    k: usize,
    heap: BinaryHeap<Reverse<PairKey>>,
}

impl TopPairs {
    pub fn new(k: usize) -> Self {
        TopPairs {
            k,
            heap: BinaryHeap::new(),
        }
    }

    pub fn push(&mut self, score: f32, a: u32, b: u32) {
        if self.k == 0 {
            return;
        }
        let key = PairKey(Score::new(score), Reverse(a.min(b)), Reverse(a.max(b)));
        if self.heap.len() < self.k {
            self.heap.push(Reverse(key));
        } else if key > self.heap.peek().unwrap().0 {
            *self.heap.peek_mut().unwrap() = Reverse(key);
        }
    }

    pub fn merge(&mut self, other: TopPairs) {
        for Reverse(PairKey(s, Reverse(a), Reverse(b))) in other.heap {
            self.push(s.0, a, b);
        }
    }

    pub fn into_sorted(self) -> Vec<ScoredPair> {
        let mut keys: Vec<PairKey> = self.heap.into_iter().map(|r| r.0).collect();
        keys.sort_unstable_by(|x, y| y.cmp(x));
        keys.into_iter()
            .map(|PairKey(s, Reverse(a), Reverse(b))| ScoredPair { score: s.0, a, b })
            .collect()
    }
}
