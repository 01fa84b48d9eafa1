//! Blocked cosine scoring over implicitly enumerated pairs, and exact
//! streaming selection of the largest negative scores.
//!
//! Nothing here ever holds more than one score block plus the top-k buffers,
//! so memory is `O(block_size² + k)` regardless of how many pairs exist.

mod kernel;
mod pairs;
mod select;

pub use kernel::{cosine_block, dot, ScoreBlock};
pub(crate) use kernel::score_indexed;
pub use pairs::{PairBlock, PairBlockCursor, PairUniverse};
pub use select::{merge_selections, select_kth_largest, ScoredPair, Selection, SelectionState, TopPairs};

/// Default rows per block side.
pub const DEFAULT_BLOCK_SIZE: usize = 512;
