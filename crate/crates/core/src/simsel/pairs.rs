//! Implicit enumeration of the pairs a protocol scores.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::types::{Manifest, Pairing, ProtocolSpec};

/// Rows taking part in a protocol. Pairs are never materialized; they are
/// implied by the side lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PairUniverse {
    /// Every unordered pair of distinct rows.
    Symmetric { rows: Vec<u32> },
    /// Every probe × gallery pair. The two lists are disjoint.
    Cross { probes: Vec<u32>, gallery: Vec<u32> },
}

impl PairUniverse {
    pub fn resolve(manifest: &Manifest, protocol: &ProtocolSpec) -> Result<Self> {
        let in_scope = |i: &usize| protocol.scope.matches(&manifest.records()[*i]);
        match &protocol.pairing {
            Pairing::AllPairs => Ok(PairUniverse::Symmetric {
                rows: (0..manifest.len())
                    .filter(in_scope)
                    .map(|i| i as u32)
                    .collect(),
            }),
            Pairing::CrossOnly { probe, gallery } => {
                let mut probes = Vec::new();
                let mut gal = Vec::new();
                for i in (0..manifest.len()).filter(in_scope) {
                    let r = &manifest.records()[i];
                    match (probe.matches(r), gallery.matches(r)) {
                        (true, true) => return Err(Error::OverlappingRoles(r.image_id.clone())),
                        (true, false) => probes.push(i as u32),
                        (false, true) => gal.push(i as u32),
                        (false, false) => {}
                    }
                }
                Ok(PairUniverse::Cross {
                    probes,
                    gallery: gal,
                })
            }
        }
    }

    /// Same universe with rows failing `keep` dropped from both sides.
    pub fn restrict(&self, keep: impl Fn(u32) -> bool) -> Self {
        let f = |v: &[u32]| v.iter().copied().filter(|&r| keep(r)).collect();
        match self {
            PairUniverse::Symmetric { rows } => PairUniverse::Symmetric { rows: f(rows) },
            PairUniverse::Cross { probes, gallery } => PairUniverse::Cross {
                probes: f(probes),
                gallery: f(gallery),
            },
        }
    }

    pub fn side_a(&self) -> &[u32] {
        match self {
            PairUniverse::Symmetric { rows } => rows,
            PairUniverse::Cross { probes, .. } => probes,
        }
    }

    pub fn side_b(&self) -> &[u32] {
        match self {
            PairUniverse::Symmetric { rows } => rows,
            PairUniverse::Cross { gallery, .. } => gallery,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, PairUniverse::Symmetric { .. })
    }

    pub fn n_images(&self) -> usize {
        match self {
            PairUniverse::Symmetric { rows } => rows.len(),
            PairUniverse::Cross { probes, gallery } => probes.len() + gallery.len(),
        }
    }

    pub fn n_pairs(&self) -> u64 {
        match self {
            PairUniverse::Symmetric { rows } => {
                let n = rows.len() as u64;
                n * n.saturating_sub(1) / 2
            }
            PairUniverse::Cross { probes, gallery } => probes.len() as u64 * gallery.len() as u64,
        }
    }

    pub fn blocks(&self, block_size: usize) -> PairBlockCursor<'_> {
        PairBlockCursor::new(self, block_size)
    }
}

/// A rectangle of side positions. On diagonal blocks of a symmetric
/// universe only the strict upper triangle (`col > row`) is admissible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBlock {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub diagonal: bool,
}

impl PairBlock {
    /// First admissible column offset (relative to `cols.start`) for row
    /// offset `i`.
    #[inline]
    pub fn first_col(&self, i: usize) -> usize {
        if self.diagonal {
            i + 1
        } else {
            0
        }
    }

    /// Calls `f(row_pos, col_pos)` for each admissible pair, as absolute
    /// side positions.
    pub fn for_each_pair(&self, mut f: impl FnMut(usize, usize)) {
        for (i, a) in self.rows.clone().enumerate() {
            for b in self.cols.start + self.first_col(i)..self.cols.end {
                f(a, b);
            }
        }
    }

    pub fn n_pairs(&self) -> u64 {
        let r = self.rows.len() as u64;
        let c = self.cols.len() as u64;
        if self.diagonal {
            r * r.saturating_sub(1) / 2
        } else {
            r * c
        }
    }
}

/// Walks the block grid of a universe. Symmetric universes visit the upper
/// triangle of blocks only, so each unordered pair appears in exactly one
/// block and never as a self-pair.
#[derive(Clone, Debug)]
pub struct PairBlockCursor<'a> {
    universe: &'a PairUniverse,
    block_size: usize,
    position: (usize, usize),
}

impl<'a> PairBlockCursor<'a> {
    pub fn new(universe: &'a PairUniverse, block_size: usize) -> Self {
        assert!(block_size > 0, "block size must be positive");
        PairBlockCursor {
            universe,
            block_size,
            position: (0, 0),
        }
    }

    fn n_blocks(&self, len: usize) -> usize {
        len.div_ceil(self.block_size)
    }

    fn span(&self, block: usize, len: usize) -> Range<usize> {
        block * self.block_size..((block + 1) * self.block_size).min(len)
    }
}

impl Iterator for PairBlockCursor<'_> {
    type Item = PairBlock;

    fn next(&mut self) -> Option<PairBlock> {
        let na = self.universe.side_a().len();
        let nb = self.universe.side_b().len();
        let (ra, rb) = (self.n_blocks(na), self.n_blocks(nb));
        let symmetric = self.universe.is_symmetric();
        loop {
            let (bi, bj) = self.position;
            if bi >= ra || rb == 0 {
                return None;
            }
            if bj >= rb {
                self.position = (bi + 1, if symmetric { bi + 1 } else { 0 });
                continue;
            }
            self.position = (bi, bj + 1);
            let block = PairBlock {
                rows: self.span(bi, na),
                cols: self.span(bj, nb),
                diagonal: symmetric && bi == bj,
            };
            if block.n_pairs() > 0 {
                return Some(block);
            }
        }
    }
}
