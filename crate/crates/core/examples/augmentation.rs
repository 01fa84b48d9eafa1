//! Prints masked and unmasked TPR with and without mask augmentation.
//! Optional argument: a JSON `AugmentationSetup`.

use pairbench_core::experiment::{augmentation_trial, AugmentationSetup};

fn main() -> pairbench_core::Result<()> {
    let setup: AugmentationSetup = match std::env::args().nth(1) {
        Some(json) => serde_json::from_str(&json)?,
        None => AugmentationSetup::default(),
    };
    for seed in 0..5 {
        let base = augmentation_trial(&setup, 0.0, seed)?;
        let aug = augmentation_trial(&setup, 0.1, seed)?;
        println!(
            "seed {seed}: masked {:.3} -> {:.3}  unmasked {:.3} -> {:.3}  loss {:.4} -> {:.4}",
            base.masked_tpr,
            aug.masked_tpr,
            base.unmasked_tpr,
            aug.unmasked_tpr,
            base.loss_trace.last().unwrap(),
            aug.loss_trace.last().unwrap()
        );
    }
    Ok(())
}
