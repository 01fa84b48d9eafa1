mod common;

use common::{random_case, TARGETS};
use pairbench_core::metrics::{count_pairs, evaluate, EvalOptions, MetricReport};
use pairbench_core::syngen::{oracle_evaluate, synthesize, ImagesPerIdentity, SynConfig};
use pairbench_core::{EmbeddingSet, Group, ProtocolSpec, RecordFilter};

fn opts(block_size: usize, workers: usize) -> EvalOptions {
    EvalOptions {
        block_size,
        workers,
        top_pairs: 0,
    }
}

fn check_report_invariants(r: &MetricReport) {
    let all = std::iter::once((&r.pair_stats, &r.entries)).chain(r.groups.values().map(|g| (&g.pair_stats, &g.entries)));
    for (stats, entries) in all {
        for e in entries {
            assert!(e.false_accepts <= e.k, "{e:?}");
            if e.k > 0 {
                assert!(e.achieved_fpr <= e.fpr_target, "{e:?}");
            }
            assert!(e.true_accepts <= stats.n_positive);
        }
        for w in entries.windows(2) {
            if w[0].fpr_target > w[1].fpr_target {
                assert!(w[0].tpr >= w[1].tpr);
            }
        }
    }
}

#[test]
fn streaming_matches_brute_force() {
    for seed in 0..12 {
        let (s, protocol) = random_case(seed, 600, &[16, 64]);
        let engine = evaluate(&s.embeddings, &s.manifest, &protocol, &opts(64, 2)).unwrap();
        let oracle = oracle_evaluate(&s.embeddings, &s.manifest, &protocol).unwrap();
        assert_eq!(engine, oracle, "seed {seed}, protocol {}", protocol.name);
        check_report_invariants(&engine);
        assert_eq!(engine.pair_stats, count_pairs(&s.manifest, &protocol).unwrap());
    }
}

#[test]
fn mr_all_reports_every_populated_group() {
    let (s, _) = random_case(3, 800, &[32]);
    let r = evaluate(&s.embeddings, &s.manifest, &ProtocolSpec::mr_all(TARGETS.to_vec()), &opts(128, 1)).unwrap();
    assert_eq!(r.groups.len(), 4);
    for g in Group::DEMOGRAPHIC {
        let sub = &r.groups[g.label()];
        assert!(sub.pair_stats.n_images < r.pair_stats.n_images);
        assert!(r.group_entry(g, 1e-2).is_some());
    }
}

#[test]
fn block_size_and_workers_do_not_change_results() {
    for seed in [21, 22] {
        let (s, protocol) = random_case(seed, 1200, &[48]);
        let reference = evaluate(&s.embeddings, &s.manifest, &protocol, &opts(16, 1)).unwrap();
        for block in [16, 128, 1024] {
            for workers in [1, 2, 8] {
                let r = evaluate(&s.embeddings, &s.manifest, &protocol, &opts(block, workers)).unwrap();
                assert_eq!(r, reference, "block {block}, workers {workers}");
            }
        }
    }
}

#[test]
fn top_negative_pairs_are_the_highest_negatives() {
    let (s, _) = random_case(5, 400, &[16]);
    let protocol = ProtocolSpec::all_pairs("all", vec![1e-3]);
    let mut o = opts(32, 3);
    o.top_pairs = 5;
    let r = evaluate(&s.embeddings, &s.manifest, &protocol, &o).unwrap();
    assert_eq!(r.top_negative_pairs.len(), 5);
    let best = r.top_negative_pairs[0].score;
    let threshold_k1 = evaluate(&s.embeddings, &s.manifest, &ProtocolSpec::all_pairs("all", vec![1e-9]), &opts(32, 1))
        .unwrap()
        .entries[0]
        .threshold;
    assert_eq!(best, threshold_k1);
    for w in r.top_negative_pairs.windows(2) {
        assert!(w[0].score >= w[1].score);
    }
}

#[test]
fn duplicate_rows_give_perfect_tpr() {
    let s = synthesize(&SynConfig {
        n_identities: 100,
        images_per_identity: ImagesPerIdentity::Fixed(3),
        dim: 64,
        intra_noise: 0.0,
        ..SynConfig::default()
    })
    .unwrap();
    let p = ProtocolSpec::all_pairs("all", TARGETS.to_vec());
    assert_eq!(count_pairs(&s.manifest, &p).unwrap().n_positive, 300);
    let r = evaluate(&s.embeddings, &s.manifest, &p, &opts(64, 2)).unwrap();
    for e in &r.entries {
        assert_eq!(e.tpr, 1.0);
    }
}

#[test]
fn zero_mask_gap_masked_protocol_equals_masks_ignored() {
    let config = SynConfig {
        n_identities: 300,
        dim: 32,
        intra_noise: 0.12,
        mask_fraction: 1.0,
        mask_gap: 0.0,
        seed: 4,
        ..SynConfig::default()
    };
    let s = synthesize(&config).unwrap();
    let masked = evaluate(&s.embeddings, &s.manifest, &ProtocolSpec::masked(vec![1e-3]), &opts(64, 1)).unwrap();

    // Same probe/gallery pairs, selected by role instead of the mask flag.
    let by_role = ProtocolSpec {
        name: "roles".into(),
        pairing: pairbench_core::Pairing::CrossOnly {
            probe: RecordFilter {
                role: Some(pairbench_core::Role::Probe),
                ..Default::default()
            },
            gallery: RecordFilter {
                role: Some(pairbench_core::Role::Gallery),
                ..Default::default()
            },
        },
        scope: RecordFilter::default(),
        fpr_targets: vec![1e-3],
        group_breakdown: false,
    };
    let ignored = evaluate(&s.embeddings, &s.manifest, &by_role, &opts(64, 1)).unwrap();
    assert_eq!(masked.entries, ignored.entries);
    assert_eq!(masked.pair_stats, ignored.pair_stats);
}

#[test]
fn larger_mask_gap_never_helps() {
    let mut last = f64::INFINITY;
    for gap in [0.0, 0.5, 1.0] {
        let s = synthesize(&SynConfig {
            n_identities: 400,
            dim: 32,
            intra_noise: 0.1,
            mask_fraction: 1.0,
            mask_gap: gap,
            seed: 11,
            ..SynConfig::default()
        })
        .unwrap();
        let r = oracle_evaluate(&s.embeddings, &s.manifest, &ProtocolSpec::masked(vec![1e-3])).unwrap();
        let tpr = r.entries[0].tpr;
        assert!(tpr <= last, "gap {gap}: {tpr} > {last}");
        last = tpr;
    }
    assert!(last < 1.0);
}

#[test]
fn positive_below_all_negatives_scores_zero() {
    // Identity "a" has two orthogonal-ish images; everything else is close together.
    let rows: Vec<[f32; 2]> = vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, 0.6]];
    let ids = ["a", "a", "b", "c", "d"];
    let records = ids
        .iter()
        .enumerate()
        .map(|(i, id)| pairbench_core::ImageRecord {
            image_id: format!("img{i}"),
            identity_id: id.to_string(),
            group: Group::None,
            masked: false,
            role: pairbench_core::Role::Any,
            subset: String::new(),
        })
        .collect();
    let m = pairbench_core::Manifest::new("tiny", records).unwrap();
    let set = EmbeddingSet::new(5, 2, rows.concat()).unwrap();
    let p = ProtocolSpec::all_pairs("all", vec![0.2]);
    let e = &evaluate(&set, &m, &p, &opts(2, 2)).unwrap().entries[0];
    assert_eq!(e.k, 1);
    assert_eq!(e.tpr, 0.0);
    assert_eq!(e, &oracle_evaluate(&set, &m, &p).unwrap().entries[0]);
}
