//! Mask-augmentation trial: train a toy model with and without synthetic
//! mask augmentation, then score masked probes of unseen identities.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::margin::{toy_train, MarginConfig, Matrix, ToyModel};
use crate::metrics::{evaluate, EvalOptions};
use crate::syngen::{synthesize, ImagesPerIdentity, SynConfig, Synthesized};
use crate::types::{EmbeddingSet, ProtocolSpec};

/// Offset between the training seed and the seed of the held-out set.
const TEST_SEED_OFFSET: u64 = 0x7465_7374;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSetup {
    pub dim: usize,
    pub train_identities: usize,
    pub train_images: usize,
    pub test_identities: usize,
    pub intra_noise: f64,
    pub mask_gap: f64,
    pub margin: MarginConfig,
    pub steps: usize,
    pub step_size: f64,
    pub fpr_target: f64,
}

impl Default for AugmentationSetup {
    fn default() -> Self {
        AugmentationSetup {
            dim: 32,
            train_identities: 100,
            train_images: 6,
            test_identities: 400,
            intra_noise: 0.12,
            mask_gap: 1.0,
            margin: MarginConfig {
                scale: 16.0,
                margin: 0.2,
            },
            steps: 150,
            step_size: 2.0,
            fpr_target: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub augment_prob: f64,
    pub seed: u64,
    /// Masked probes against non-masked gallery, in percent.
    pub masked_tpr: f64,
    /// All pairs among non-masked images, in percent.
    pub unmasked_tpr: f64,
    pub loss_trace: Vec<f64>,
}

fn as_matrix(s: &Synthesized) -> Matrix {
    let e = &s.embeddings;
    Matrix {
        rows: e.n_rows(),
        cols: e.dim(),
        data: e.data().iter().map(|&v| v as f64).collect(),
    }
}

fn embed_all(model: &ToyModel, inputs: &Matrix) -> Result<EmbeddingSet> {
    let mut data = Vec::with_capacity(inputs.rows * inputs.cols);
    for i in 0..inputs.rows {
        data.extend(model.embed(inputs.row(i)).iter().map(|&v| v as f32));
    }
    EmbeddingSet::new(inputs.rows, inputs.cols, data)?.normalize()
}

/// One training run. Runs that differ only in `augment_prob` share the
/// same identities, noise and held-out set.
pub fn augmentation_trial(setup: &AugmentationSetup, augment_prob: f64, seed: u64) -> Result<TrialOutcome> {
    let train = synthesize(&SynConfig {
        name: "train".into(),
        n_identities: setup.train_identities,
        images_per_identity: ImagesPerIdentity::Fixed(setup.train_images),
        dim: setup.dim,
        intra_noise: setup.intra_noise,
        mask_gap: setup.mask_gap,
        augment_prob,
        seed,
        ..SynConfig::default()
    })?;
    let test = synthesize(&SynConfig {
        name: "test".into(),
        n_identities: setup.test_identities,
        images_per_identity: ImagesPerIdentity::Fixed(3),
        dim: setup.dim,
        intra_noise: setup.intra_noise,
        mask_gap: setup.mask_gap,
        mask_fraction: 1.0,
        seed: seed.wrapping_add(TEST_SEED_OFFSET),
        ..SynConfig::default()
    })?;

    let labels: Vec<usize> = train.manifest.identity_index().iter().map(|&i| i as usize).collect();
    let outcome = toy_train(&as_matrix(&train), &labels, &setup.margin, setup.steps, setup.step_size, seed)?;
    let embedded = embed_all(&outcome.model, &as_matrix(&test))?;

    let opts = EvalOptions {
        workers: 1,
        ..EvalOptions::default()
    };
    let targets = vec![setup.fpr_target];
    let masked = evaluate(&embedded, &test.manifest, &ProtocolSpec::masked(targets.clone()), &opts)?;
    let unmasked_protocol = ProtocolSpec::all_pairs("unmasked", targets).with_scope(crate::types::RecordFilter {
        masked: Some(false),
        ..Default::default()
    });
    let unmasked = evaluate(&embedded, &test.manifest, &unmasked_protocol, &opts)?;
    Ok(TrialOutcome {
        augment_prob,
        seed,
        masked_tpr: masked.entries[0].tpr_percent,
        unmasked_tpr: unmasked.entries[0].tpr_percent,
        loss_trace: outcome.trace,
    })
}
