use pairbench_core::experiment::{augmentation_trial, AugmentationSetup};
use pairbench_core::io::{parse_manifest, write_manifest_to};
use pairbench_core::simsel::dot;
use pairbench_core::syngen::{synthesize, ImagesPerIdentity, SynConfig};
use pairbench_core::Group;

#[test]
fn same_config_is_bit_identical() {
    let config = SynConfig {
        n_identities: 50,
        images_per_identity: ImagesPerIdentity::Range { min: 3, max: 7 },
        group_mix: Some([0.1, 0.2, 0.3, 0.4]),
        mask_fraction: 0.4,
        augment_prob: 0.2,
        seed: 99,
        ..SynConfig::default()
    };
    let a = synthesize(&config).unwrap();
    let b = synthesize(&config).unwrap();
    assert_eq!(a.manifest.records(), b.manifest.records());
    assert!(a.embeddings.data().iter().zip(b.embeddings.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = synthesize(&SynConfig { seed: 100, ..config }).unwrap();
    assert_ne!(a.embeddings.data(), c.embeddings.data());
}

#[test]
fn hundred_identities_give_three_hundred_records() {
    let s = synthesize(&SynConfig {
        n_identities: 100,
        images_per_identity: ImagesPerIdentity::Fixed(3),
        dim: 64,
        ..SynConfig::default()
    })
    .unwrap();
    let mut text = Vec::new();
    write_manifest_to(&s.manifest, &mut text).unwrap();
    let back = parse_manifest(text.as_slice(), "round").unwrap();
    assert_eq!(back.len(), 300);
    assert_eq!(back.n_identities(), 100);
    assert_eq!(back.records(), s.manifest.records());
    s.embeddings.check_normalized(1e-6).unwrap();
}

#[test]
fn zero_noise_duplicates_rows_within_identity() {
    let s = synthesize(&SynConfig {
        n_identities: 20,
        intra_noise: 0.0,
        mask_gap: 0.0,
        ..SynConfig::default()
    })
    .unwrap();
    let idx = s.manifest.identity_index();
    for i in 0..s.manifest.len() {
        for j in i + 1..s.manifest.len() {
            if idx[i] == idx[j] {
                assert_eq!(s.embeddings.row(i), s.embeddings.row(j));
                assert!((dot(s.embeddings.row(i), s.embeddings.row(j)) - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn group_mix_and_subset_tags() {
    let s = synthesize(&SynConfig {
        n_identities: 400,
        group_mix: Some([0.5, 0.5, 0.0, 0.0]),
        subset: "children".into(),
        ..SynConfig::default()
    })
    .unwrap();
    let recs = s.manifest.records();
    assert!(recs.iter().all(|r| matches!(r.group, Group::African | Group::Caucasian)));
    assert!(recs.iter().any(|r| r.group == Group::African));
    assert!(recs.iter().all(|r| r.subset == "children" && r.image_id.starts_with("children/")));
}

#[test]
fn mask_shift_lowers_own_identity_similarity() {
    for seed in 0..10 {
        let s = synthesize(&SynConfig {
            n_identities: 200,
            dim: 64,
            intra_noise: 0.08,
            mask_fraction: 1.0,
            mask_gap: 0.8,
            seed,
            ..SynConfig::default()
        })
        .unwrap();
        // Each identity: masked probe at offset 0, gallery at 1 and 2.
        let (mut masked, mut clean) = (0.0, 0.0);
        for id in 0..200 {
            let row = |j: usize| s.embeddings.row(3 * id + j);
            masked += dot(row(0), row(1)) as f64;
            clean += dot(row(1), row(2)) as f64;
        }
        assert!(masked < clean, "seed {seed}: {masked} vs {clean}");
    }
}

#[test]
fn augmentation_helps_masked_verification() {
    let setup = AugmentationSetup::default();
    let mut wins = 0;
    for seed in 0..5 {
        let base = augmentation_trial(&setup, 0.0, seed).unwrap();
        let aug = augmentation_trial(&setup, 0.1, seed).unwrap();
        if aug.masked_tpr >= base.masked_tpr {
            wins += 1;
        }
    }
    assert!(wins >= 4, "augmentation helped on {wins} of 5 seeds");
}
