//! Times a full all-pairs evaluation. Arguments: images, dim, workers.

use std::time::Instant;

use pairbench_core::metrics::{evaluate, EvalOptions};
use pairbench_core::syngen::{synthesize, ImagesPerIdentity, SynConfig};
use pairbench_core::ProtocolSpec;

fn main() -> pairbench_core::Result<()> {
    let arg = |i: usize, default: usize| std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let (n, dim, workers) = (arg(1, 50_000), arg(2, 512), arg(3, 8));
    let t = Instant::now();
    let s = synthesize(&SynConfig {
        n_identities: n / 5,
        images_per_identity: ImagesPerIdentity::Fixed(5),
        dim,
        intra_noise: 0.05,
        ..SynConfig::default()
    })?;
    println!("generated {} x {} in {:.1?}", s.manifest.len(), dim, t.elapsed());
    let t = Instant::now();
    let opts = EvalOptions {
        workers,
        ..EvalOptions::default()
    };
    let r = evaluate(&s.embeddings, &s.manifest, &ProtocolSpec::all_pairs("all", vec![1e-6]), &opts)?;
    println!("{:?}\nevaluated in {:.1?}", r.entries[0], t.elapsed());
    Ok(())
}
