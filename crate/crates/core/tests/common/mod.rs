#![allow(dead_code)]

use pairbench_core::syngen::{synthesize, ImagesPerIdentity, SynConfig, Synthesized};
use pairbench_core::{ProtocolSpec, RecordFilter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TARGETS: [f64; 3] = [1e-2, 1e-3, 5e-4];

/// A random synthetic set of at most `max_images` images plus a protocol
/// drawn from masked, MR-All style and scoped all-pairs.
pub fn random_case(seed: u64, max_images: usize, dims: &[usize]) -> (Synthesized, ProtocolSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_per = rng.random_range(3..=6usize);
    let n_identities = rng.random_range(20..=max_images / max_per);
    let kind = rng.random_range(0..3u8);
    let config = SynConfig {
        n_identities,
        images_per_identity: ImagesPerIdentity::Range { min: 3, max: max_per },
        dim: dims[rng.random_range(0..dims.len())],
        intra_noise: rng.random_range(0.02..0.2),
        group_mix: Some([0.25; 4]),
        group_noise: [1.0, 0.8, 1.2, 1.5],
        mask_fraction: rng.random_range(0.2..0.8),
        augment_prob: rng.random_range(0.0..0.3),
        seed: rng.random(),
        ..SynConfig::default()
    };
    let protocol = match kind {
        0 => ProtocolSpec::masked(TARGETS.to_vec()),
        1 => ProtocolSpec::mr_all(TARGETS.to_vec()),
        _ => ProtocolSpec::all_pairs("unmasked", TARGETS.to_vec()).with_scope(RecordFilter {
            masked: Some(false),
            ..Default::default()
        }),
    };
    (synthesize(&config).unwrap(), protocol)
}
