//! Deterministic synthetic benchmarks and the brute-force evaluation oracle.
//!
//! # Generator
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`, seeded
//! with `seed_from_u64`); normal variates use `rand_distr::StandardNormal`.
//! Draw order, per identity `i` in `0..n_identities`:
//!
//! 1. group: one uniform `f64` when `group_mix` is set (inverse CDF over the
//!    four weights), otherwise nothing and the group is `None`;
//! 2. image count: one `random_range(min..=max)` for a range, nothing for a
//!    fixed count;
//! 3. center: `dim` normals, normalized;
//! 4. per image: `dim` normals `g`, then one uniform `f64` `u`. The image is
//!    `normalize(center + sigma * g)` with `sigma = intra_noise *
//!    group_noise[group]`.
//!
//! The first `round(mask_fraction * n_identities)` identities use the masked
//! layout: image 0 is a masked probe, the rest are non-masked gallery images.
//! Any other image is masked when `u < augment_prob`. Masked images are
//! moved by [`apply_mask_shift`] along [`mask_direction`], which depends only
//! on `dim`. Vectors are built in `f64` and stored as `f32`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{negatives_allowed, percent3, GroupReport, MetricReport, OperatingPoint, PairStats};
use crate::simsel::dot;
use crate::types::{
    check_pairing, EmbeddingSet, Group, ImageRecord, Manifest, Pairing, ProtocolSpec, Role, UNIT_NORM_TOLERANCE,
};

/// Seed of the stream that draws the global mask direction.
pub const MASK_DIRECTION_SEED: u64 = 0x6d61_736b_5f64_6972;

/// Largest input [`oracle_evaluate`] accepts.
pub const ORACLE_LIMIT: usize = 5_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImagesPerIdentity {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl ImagesPerIdentity {
    fn min(&self) -> usize {
        match *self {
            ImagesPerIdentity::Fixed(n) => n,
            ImagesPerIdentity::Range { min, .. } => min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynConfig {
    pub name: String,
    /// Tag written to every record; also prefixes ids when non-empty.
    pub subset: String,
    pub n_identities: usize,
    pub images_per_identity: ImagesPerIdentity,
    pub dim: usize,
    /// Per-coordinate standard deviation of the within-identity noise.
    pub intra_noise: f64,
    /// Weights over African, Caucasian, SouthAsian, EastAsian.
    pub group_mix: Option<[f64; 4]>,
    /// Noise multiplier per group, same order as `group_mix`.
    pub group_noise: [f64; 4],
    pub mask_fraction: f64,
    /// Length of the mask shift before re-normalization.
    pub mask_gap: f64,
    pub augment_prob: f64,
    pub seed: u64,
}

impl Default for SynConfig {
    fn default() -> Self {
        SynConfig {
            name: "synthetic".into(),
            subset: String::new(),
            n_identities: 100,
            images_per_identity: ImagesPerIdentity::Fixed(3),
            dim: 64,
            intra_noise: 0.1,
            group_mix: None,
            group_noise: [1.0; 4],
            mask_fraction: 0.0,
            mask_gap: 0.8,
            augment_prob: 0.0,
            seed: 0,
        }
    }
}

impl SynConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SynConfig(m));
        if self.dim < 2 {
            return bad(format!("dim {} < 2", self.dim));
        }
        if self.n_identities == 0 {
            return bad("no identities".into());
        }
        match self.images_per_identity {
            ImagesPerIdentity::Fixed(0) => return bad("zero images per identity".into()),
            ImagesPerIdentity::Range { min, max } if min == 0 || min > max => {
                return bad(format!("bad image range {min}..={max}"))
            }
            _ => {}
        }
        if !(self.intra_noise >= 0.0) || !(self.mask_gap >= 0.0) {
            return bad("noise and mask gap must be non-negative".into());
        }
        if self.group_noise.iter().any(|&v| !(v >= 0.0)) {
            return bad("group noise multipliers must be non-negative".into());
        }
        if let Some(w) = self.group_mix {
            if w.iter().any(|&v| !(v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("group weights {w:?} must be non-negative and sum to 1"));
            }
        }
        for (what, p) in [("mask_fraction", self.mask_fraction), ("augment_prob", self.augment_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{what} {p} outside [0, 1]"));
            }
        }
        if self.masked_identities() > 0 && self.images_per_identity.min() < 3 {
            return bad("masked layout needs at least 3 images per identity".into());
        }
        Ok(())
    }

    fn masked_identities(&self) -> usize {
        (self.mask_fraction * self.n_identities as f64).round() as usize
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Global unit direction along which masks move embeddings.
pub fn mask_direction(dim: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(MASK_DIRECTION_SEED);
    normalized(gaussian(&mut rng, dim))
}

/// `normalize(e + gamma * u_mask)`; `gamma = 0` returns `e` unchanged. If
/// the shifted vector vanishes the input is returned as well.
pub fn apply_mask_shift(embedding: &[f64], gamma: f64, u_mask: &[f64]) -> Vec<f64> {
    if gamma == 0.0 {
        return embedding.to_vec();
    }
    let shifted: Vec<f64> = embedding.iter().zip(u_mask).map(|(e, u)| e + gamma * u).collect();
    if shifted.iter().all(|&v| v == 0.0) {
        return embedding.to_vec();
    }
    normalized(shifted)
}

#[derive(Clone, Debug)]
pub struct Synthesized {
    pub manifest: Manifest,
    pub embeddings: EmbeddingSet,
}

pub fn synthesize(config: &SynConfig) -> Result<Synthesized> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let u_mask = mask_direction(config.dim);
    let n_masked = config.masked_identities();
    let prefix = if config.subset.is_empty() {
        String::new()
    } else {
        format!("{}/", config.subset)
    };

    let mut records = Vec::new();
    let mut data = Vec::new();
    for i in 0..config.n_identities {
        let group = match config.group_mix {
            None => Group::None,
            Some(w) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = Group::DEMOGRAPHIC[3];
                for (g, wg) in Group::DEMOGRAPHIC.iter().zip(w) {
                    acc += wg;
                    if u < acc {
                        pick = *g;
                        break;
                    }
                }
                pick
            }
        };
        let count = match config.images_per_identity {
            ImagesPerIdentity::Fixed(n) => n,
            ImagesPerIdentity::Range { min, max } => rng.random_range(min..=max),
        };
        let center = normalized(gaussian(&mut rng, config.dim));
        let sigma = config.intra_noise * group.demographic_index().map_or(1.0, |g| config.group_noise[g]);
        let layout = i < n_masked;
        let identity_id = format!("{prefix}id{i:06}");
        for j in 0..count {
            let noise = gaussian(&mut rng, config.dim);
            let u: f64 = rng.random();
            let mut e = normalized(center.iter().zip(&noise).map(|(c, g)| c + sigma * g).collect());
            let masked = if layout { j == 0 } else { u < config.augment_prob };
            if masked {
                e = apply_mask_shift(&e, config.mask_gap, &u_mask);
            }
            let role = match (layout, j) {
                (false, _) => Role::Any,
                (true, 0) => Role::Probe,
                (true, _) => Role::Gallery,
            };
            records.push(ImageRecord {
                image_id: format!("{identity_id}_{j:03}"),
                identity_id: identity_id.clone(),
                group,
                masked,
                role,
                subset: config.subset.clone(),
            });
            data.extend(e.iter().map(|&v| v as f32));
        }
    }
    let n_rows = records.len();
    Ok(Synthesized {
        manifest: Manifest::new(config.name.clone(), records)?,
        embeddings: EmbeddingSet::new(n_rows, config.dim, data)?,
    })
}

struct Materialized {
    positives: Vec<f32>,
    negatives: Vec<f32>,
    images: usize,
}

fn brute_force_report(m: &Materialized, symmetric: bool, targets: &[f64]) -> Option<(PairStats, Vec<OperatingPoint>)> {
    let n_pos = m.positives.len() as u64;
    let n_neg = m.negatives.len() as u64;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let stats = if symmetric {
        let n = m.images as u64;
        PairStats {
            n_images: n,
            n_positive: n_pos,
            n_negative_engine: n_neg,
            n_negative_paper: n * (n - 1) - n_pos,
        }
    } else {
        PairStats {
            n_images: m.images as u64,
            n_positive: n_pos,
            n_negative_engine: n_neg,
            n_negative_paper: n_neg,
        }
    };
    let mut sorted = m.negatives.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let entries = targets
        .iter()
        .map(|&t| {
            let k = negatives_allowed(t, n_neg);
            let threshold = sorted[k.max(1) as usize - 1] + 0.0;
            let false_accepts = m.negatives.iter().filter(|&&v| v > threshold).count() as u64;
            let true_accepts = m.positives.iter().filter(|&&v| v > threshold).count() as u64;
            OperatingPoint {
                fpr_target: t,
                k,
                threshold,
                true_accepts,
                false_accepts,
                tpr: true_accepts as f64 / n_pos as f64,
                tpr_percent: percent3(true_accepts, n_pos),
                achieved_fpr: false_accepts as f64 / n_neg as f64,
            }
        })
        .collect();
    Some((stats, entries))
}

/// Reference evaluation that scores every pair with a plain double loop
/// over the manifest and sorts all negatives. Produces the same report
/// schema as [`crate::metrics::evaluate`].
pub fn oracle_evaluate(set: &EmbeddingSet, manifest: &Manifest, protocol: &ProtocolSpec) -> Result<MetricReport> {
    protocol.validate()?;
    check_pairing(manifest, set)?;
    if manifest.len() > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            n: manifest.len(),
            limit: ORACLE_LIMIT,
        });
    }
    set.check_normalized(UNIT_NORM_TOLERANCE)?;

    let recs = manifest.records();
    let in_scope: Vec<usize> = (0..recs.len()).filter(|&i| protocol.scope.matches(&recs[i])).collect();
    let (left, right, symmetric): (Vec<usize>, Vec<usize>, bool) = match &protocol.pairing {
        Pairing::AllPairs => (in_scope.clone(), in_scope.clone(), true),
        Pairing::CrossOnly { probe, gallery } => {
            for &i in &in_scope {
                if probe.matches(&recs[i]) && gallery.matches(&recs[i]) {
                    return Err(Error::OverlappingRoles(recs[i].image_id.clone()));
                }
            }
            (
                in_scope.iter().copied().filter(|&i| probe.matches(&recs[i])).collect(),
                in_scope.iter().copied().filter(|&i| gallery.matches(&recs[i])).collect(),
                false,
            )
        }
    };

    let empty = || Materialized {
        positives: Vec::new(),
        negatives: Vec::new(),
        images: 0,
    };
    let mut all = empty();
    let mut per_group: BTreeMap<Group, Materialized> = BTreeMap::new();
    for &i in &left {
        for &j in &right {
            if symmetric && j <= i {
                continue;
            }
            let s = dot(set.row(i), set.row(j));
            let same = recs[i].identity_id == recs[j].identity_id;
            let mut sinks = vec![&mut all];
            if protocol.group_breakdown && recs[i].group.is_demographic() && recs[i].group == recs[j].group {
                sinks.push(per_group.entry(recs[i].group).or_insert_with(empty));
            }
            for sink in sinks {
                if same {
                    sink.positives.push(s);
                } else {
                    sink.negatives.push(s);
                }
            }
        }
    }
    all.images = if symmetric { left.len() } else { left.len() + right.len() };
    for (g, m) in per_group.iter_mut() {
        let count = |v: &[usize]| v.iter().filter(|&&i| recs[i].group == *g).count();
        m.images = if symmetric { count(&left) } else { count(&left) + count(&right) };
    }

    let Some((pair_stats, entries)) = brute_force_report(&all, symmetric, &protocol.fpr_targets) else {
        return Err(if all.positives.is_empty() {
            Error::EmptyPositives
        } else {
            Error::EmptyNegatives
        });
    };
    let groups = per_group
        .iter()
        .filter_map(|(g, m)| {
            brute_force_report(m, symmetric, &protocol.fpr_targets)
                .map(|(pair_stats, entries)| (g.label().to_string(), GroupReport { pair_stats, entries }))
        })
        .collect();
    Ok(MetricReport {
        protocol: protocol.name.clone(),
        pair_stats,
        entries,
        groups,
        top_negative_pairs: Vec::new(),
    })
}
