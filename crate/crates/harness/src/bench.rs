//! Benchmark definition: which protocols a submission is scored on and how
//! reports become a leaderboard row.

use std::collections::BTreeMap;
use std::path::Path;

use pairbench_core::gate::{MeasuredProfile, SubmissionMeta, SubtrackRules, BYTES_PER_MB};
use pairbench_core::metrics::{LeaderboardEntry, MetricReport};
use pairbench_core::syngen::{synthesize, ImagesPerIdentity, SynConfig};
use pairbench_core::{EmbeddingSet, Group, Manifest, ProtocolSpec, RecordFilter};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MASKED: &str = "masked";
pub const MR_ALL: &str = "mr_all";
pub const CHILDREN: &str = "children";

fn subset(name: &str) -> RecordFilter {
    RecordFilter {
        subset: Some(name.into()),
        ..Default::default()
    }
}

/// Protocol presets by name. Presets score the whole manifest; the
/// benchmark narrows them to their subsets.
pub fn protocol_preset(name: &str) -> Option<ProtocolSpec> {
    match name {
        MASKED => Some(ProtocolSpec::masked(vec![1e-4])),
        MR_ALL => Some(ProtocolSpec::mr_all(vec![1e-6])),
        CHILDREN => Some(ProtocolSpec::all_pairs(CHILDREN, vec![1e-4])),
        "all_pairs" => Some(ProtocolSpec::all_pairs("all_pairs", vec![1e-4])),
        _ => None,
    }
}

/// A preset name or a path to a protocol JSON file.
pub fn load_protocol(spec: &str) -> Result<ProtocolSpec> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(p) = protocol_preset(spec) {
            return Ok(p);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let p: ProtocolSpec = serde_json::from_str(&text)?;
    p.validate()?;
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Scored protocols; the first target of each is the reported one.
    pub masked: ProtocolSpec,
    pub mr_all: ProtocolSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<ProtocolSpec>,
    pub subtracks: BTreeMap<String, SubtrackRules>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let scoped = |name: &str| protocol_preset(name).expect("preset").with_scope(subset(name));
        BenchmarkConfig {
            masked: scoped(MASKED),
            mr_all: scoped(MR_ALL),
            children: Some(scoped(CHILDREN)),
            subtracks: [SubtrackRules::ms1m(), SubtrackRules::glint360k()]
                .into_iter()
                .map(|r| (r.name.clone(), r))
                .collect(),
        }
    }
}

impl BenchmarkConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: BenchmarkConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.protocols() {
            p.validate()?;
        }
        for r in self.subtracks.values() {
            r.validate()?;
        }
        Ok(())
    }

    /// Protocols in evaluation order.
    pub fn protocols(&self) -> Vec<&ProtocolSpec> {
        let mut v = vec![&self.masked, &self.mr_all];
        v.extend(self.children.as_ref());
        v
    }
}

/// Builds the leaderboard row from the reports of one submission.
pub fn leaderboard_entry(
    cfg: &BenchmarkConfig,
    reports: &BTreeMap<String, MetricReport>,
    meta: &SubmissionMeta,
    profile: &MeasuredProfile,
) -> Result<LeaderboardEntry> {
    let headline = |p: &ProtocolSpec| -> Result<&MetricReport> {
        reports
            .get(&p.name)
            .ok_or_else(|| HarnessError::Pipeline(format!("missing report for protocol {:?}", p.name)))
    };
    let masked = headline(&cfg.masked)?;
    let mr_all = headline(&cfg.mr_all)?;
    let children = match &cfg.children {
        Some(p) => Some(headline(p)?.entries[0].tpr_percent),
        None => None,
    };
    let group = |g: Group| mr_all.groups.get(g.label()).map(|r| r.entries[0].tpr_percent);
    Ok(LeaderboardEntry {
        participant: meta.participant.clone(),
        tpr_mask: masked.entries[0].tpr_percent,
        tpr_children: children,
        tpr_african: group(Group::African),
        tpr_caucasian: group(Group::Caucasian),
        tpr_south_asian: group(Group::SouthAsian),
        tpr_east_asian: group(Group::EastAsian),
        tpr_mr_all: mr_all.entries[0].tpr_percent,
        size_mb: (meta.model_bytes as f64 / BYTES_PER_MB * 1000.0).round() / 1000.0,
        time_ms: profile.ms_per_image,
        feat_dim: meta.declared_dim,
        weighted_score: 0.0,
    }
    .scored())
}

/// The subsets of the synthetic benchmark fixture, in manifest order.
pub fn fixture_configs(seed: u64, dim: usize) -> Vec<SynConfig> {
    let base = SynConfig {
        dim,
        intra_noise: 0.11,
        ..SynConfig::default()
    };
    vec![
        SynConfig {
            name: MASKED.into(),
            subset: MASKED.into(),
            n_identities: 200,
            images_per_identity: ImagesPerIdentity::Fixed(3),
            mask_fraction: 1.0,
            seed,
            ..base.clone()
        },
        SynConfig {
            name: MR_ALL.into(),
            subset: MR_ALL.into(),
            n_identities: 250,
            images_per_identity: ImagesPerIdentity::Range { min: 3, max: 5 },
            group_mix: Some([0.25; 4]),
            group_noise: [1.1, 0.9, 1.0, 1.2],
            seed: seed.wrapping_add(1),
            ..base.clone()
        },
        SynConfig {
            name: CHILDREN.into(),
            subset: CHILDREN.into(),
            n_identities: 100,
            images_per_identity: ImagesPerIdentity::Fixed(4),
            intra_noise: 0.14,
            seed: seed.wrapping_add(2),
            ..base
        },
    ]
}

/// Synthesizes each config and stacks the results into one set.
pub fn synthesize_all(name: &str, configs: &[SynConfig]) -> Result<(Manifest, EmbeddingSet)> {
    let parts = configs.iter().map(synthesize).collect::<pairbench_core::Result<Vec<_>>>()?;
    let manifests: Vec<&Manifest> = parts.iter().map(|p| &p.manifest).collect();
    let sets: Vec<&EmbeddingSet> = parts.iter().map(|p| &p.embeddings).collect();
    Ok((Manifest::concat(name, &manifests)?, EmbeddingSet::concat(&sets)?))
}
