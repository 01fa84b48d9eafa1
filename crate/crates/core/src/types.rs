//! Domain types shared by every engine module.
//!
//! A [`Manifest`] and an [`EmbeddingSet`] are paired by position: record `i`
//! of the manifest describes row `i` of the embedding matrix.

use std::fmt;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row norms for a set to count as unit-normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Demographic group of an image. `None` marks test sets without a
/// demographic breakdown (masked set, children set).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    African,
    Caucasian,
    SouthAsian,
    EastAsian,
    None,
}

impl Group {
    pub const DEMOGRAPHIC: [Group; 4] = [
        Group::African,
        Group::Caucasian,
        Group::SouthAsian,
        Group::EastAsian,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Group::African => "African",
            Group::Caucasian => "Caucasian",
            Group::SouthAsian => "SouthAsian",
            Group::EastAsian => "EastAsian",
            Group::None => "None",
        }
    }

    pub fn from_label(label: &str) -> Option<Group> {
        match label {
            "African" => Some(Group::African),
            "Caucasian" => Some(Group::Caucasian),
            "SouthAsian" => Some(Group::SouthAsian),
            "EastAsian" => Some(Group::EastAsian),
            "None" => Some(Group::None),
            _ => None,
        }
    }

    pub fn is_demographic(self) -> bool {
        self != Group::None
    }

    /// Position in [`Group::DEMOGRAPHIC`], if any.
    pub fn demographic_index(self) -> Option<usize> {
        match self {
            Group::African => Some(0),
            Group::Caucasian => Some(1),
            Group::SouthAsian => Some(2),
            Group::EastAsian => Some(3),
            Group::None => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Probe,
    Gallery,
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub identity_id: String,
    pub group: Group,
    pub masked: bool,
    pub role: Role,
    /// Optional test-set tag, used to carve one manifest into several sets.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub subset: String,
}

/// Ordered image records. Record order is the row order of the companion
/// embedding set.
#[derive(Clone, Debug)]
pub struct Manifest {
    name: String,
    records: Vec<ImageRecord>,
    identity_index: Vec<u32>,
    n_identities: usize,
}

impl Manifest {
    pub fn new(name: impl Into<String>, records: Vec<ImageRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = FxHashSet::with_capacity_and_hasher(records.len(), Default::default());
        for r in &records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId(r.image_id.clone()));
            }
        }
        let mut ids: FxHashMap<&str, u32> = FxHashMap::default();
        let identity_index = records
            .iter()
            .map(|r| {
                let next = ids.len() as u32;
                *ids.entry(r.identity_id.as_str()).or_insert(next)
            })
            .collect();
        let n_identities = ids.len();
        Ok(Manifest {
            name: name.into(),
            records,
            identity_index,
            n_identities,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_identities(&self) -> usize {
        self.n_identities
    }

    /// Dense identity number of each row, assigned in order of first appearance.
    pub fn identity_index(&self) -> &[u32] {
        &self.identity_index
    }

    /// Concatenates manifests; image ids must stay unique across parts.
    pub fn concat(name: impl Into<String>, parts: &[&Manifest]) -> Result<Manifest> {
        let records = parts
            .iter()
            .flat_map(|m| m.records.iter().cloned())
            .collect();
        Manifest::new(name, records)
    }
}

/// Row-major `n_rows × dim` single-precision matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    n_rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(n_rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dim must be at least 1".into()));
        }
        if n_rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{} values do not form a {n_rows}x{dim} matrix",
                data.len()
            )));
        }
        Ok(EmbeddingSet { n_rows, dim, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Scales every row to unit Euclidean norm. Norms are accumulated in
    /// double precision.
    pub fn normalize(&self) -> Result<EmbeddingSet> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, row) in self.rows().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i });
            }
            let norm = row_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroNorm { row: i });
            }
            data.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Ok(EmbeddingSet {
            n_rows: self.n_rows,
            dim: self.dim,
            data,
        })
    }

    /// First row whose norm deviates from 1 by more than `tolerance`.
    pub fn check_normalized(&self, tolerance: f64) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            let norm = row_norm(row);
            if !norm.is_finite() || (norm - 1.0).abs() > tolerance {
                return Err(Error::NotNormalized { row: i, norm });
            }
        }
        Ok(())
    }

    pub fn concat(parts: &[&EmbeddingSet]) -> Result<EmbeddingSet> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("nothing to concatenate".into()));
        };
        let dim = first.dim;
        let mut data = Vec::new();
        let mut n_rows = 0;
        for p in parts {
            if p.dim != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: p.dim,
                });
            }
            data.extend_from_slice(&p.data);
            n_rows += p.n_rows;
        }
        EmbeddingSet::new(n_rows, dim, data)
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Rejects any manifest/embedding pair whose row counts differ.
pub fn check_pairing(manifest: &Manifest, set: &EmbeddingSet) -> Result<()> {
    if manifest.len() != set.n_rows() {
        return Err(Error::RowCountMismatch {
            expected: manifest.len(),
            found: set.n_rows(),
        });
    }
    Ok(())
}

/// Conjunction of optional field constraints over an [`ImageRecord`].
/// An empty filter matches every record.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordFilter {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

impl RecordFilter {
    pub fn matches(&self, r: &ImageRecord) -> bool {
        self.subset.as_deref().is_none_or(|s| r.subset == s)
            && self.group.is_none_or(|g| r.group == g)
            && self.masked.is_none_or(|m| r.masked == m)
            && self.role.is_none_or(|role| r.role == role)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pairing {
    /// Every unordered pair of distinct in-scope images.
    AllPairs,
    /// Every probe × gallery pair; the two sides must be disjoint.
    CrossOnly {
        probe: RecordFilter,
        gallery: RecordFilter,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub name: String,
    pub pairing: Pairing,
    /// Restricts both endpoints of every pair.
    #[serde(default)]
    pub scope: RecordFilter,
    pub fpr_targets: Vec<f64>,
    #[serde(default)]
    pub group_breakdown: bool,
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fpr_targets.is_empty() {
            return Err(Error::Protocol("no fpr targets".into()));
        }
        for &t in &self.fpr_targets {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::FprTarget(t));
            }
        }
        Ok(())
    }

    pub fn all_pairs(name: impl Into<String>, fpr_targets: Vec<f64>) -> Self {
        ProtocolSpec {
            name: name.into(),
            pairing: Pairing::AllPairs,
            scope: RecordFilter::default(),
            fpr_targets,
            group_breakdown: false,
        }
    }

    /// Masked probes against non-masked gallery images.
    pub fn masked(fpr_targets: Vec<f64>) -> Self {
        ProtocolSpec {
            name: "masked".into(),
            pairing: Pairing::CrossOnly {
                probe: RecordFilter {
                    masked: Some(true),
                    ..Default::default()
                },
                gallery: RecordFilter {
                    masked: Some(false),
                    ..Default::default()
                },
            },
            scope: RecordFilter::default(),
            fpr_targets,
            group_breakdown: false,
        }
    }

    /// All pairs over the demographic images, with per-group sub-reports.
    pub fn mr_all(fpr_targets: Vec<f64>) -> Self {
        ProtocolSpec {
            name: "mr_all".into(),
            pairing: Pairing::AllPairs,
            scope: RecordFilter::default(),
            fpr_targets,
            group_breakdown: true,
        }
    }

    pub fn with_scope(mut self, scope: RecordFilter) -> Self {
        self.scope = scope;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, identity: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            identity_id: identity.into(),
            group: Group::None,
            masked: false,
            role: Role::Any,
            subset: String::new(),
        }
    }

    #[test]
    fn identities_are_numbered_by_first_appearance() {
        let m = Manifest::new("t", vec![rec("1", "b"), rec("2", "a"), rec("3", "b")]).unwrap();
        assert_eq!(m.identity_index(), &[0, 1, 0]);
        assert_eq!(m.n_identities(), 2);
    }

    #[test]
    fn duplicate_image_id_is_rejected() {
        let err = Manifest::new("t", vec![rec("x", "a"), rec("x", "b")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateImageId(id) if id == "x"));
    }

    #[test]
    fn empty_manifest_is_rejected() {
        assert!(matches!(Manifest::new("t", vec![]), Err(Error::EmptyManifest)));
    }

    #[test]
    fn normalize_three_four() {
        let set = EmbeddingSet::new(1, 2, vec![3.0, 4.0]).unwrap();
        let n = set.normalize().unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-6);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn normalize_leaves_unit_rows_alone() {
        let set = EmbeddingSet::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8]).unwrap();
        let n = set.normalize().unwrap();
        for (a, b) in set.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_reports_zero_row() {
        let set = EmbeddingSet::new(3, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(set.normalize(), Err(Error::ZeroNorm { row: 1 })));
    }

    #[test]
    fn pairing_rejects_row_mismatch() {
        let m = Manifest::new("t", vec![rec("1", "a"), rec("2", "a")]).unwrap();
        let set = EmbeddingSet::new(3, 1, vec![1.0; 3]).unwrap();
        assert!(matches!(
            check_pairing(&m, &set),
            Err(Error::RowCountMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn empty_filter_matches_everything() {
        assert!(RecordFilter::default().matches(&rec("1", "a")));
        let f = RecordFilter {
            masked: Some(true),
            ..Default::default()
        };
        assert!(!f.matches(&rec("1", "a")));
    }

    #[test]
    fn protocol_targets_must_be_open_unit_interval() {
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            let p = ProtocolSpec::all_pairs("p", vec![bad]);
            assert!(p.validate().is_err(), "{bad}");
        }
        assert!(ProtocolSpec::all_pairs("p", vec![1e-6]).validate().is_ok());
    }

    #[test]
    fn protocol_json_shape() {
        let p = ProtocolSpec::masked(vec![1e-4]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(
            json,
            r#"{"name":"masked","pairing":{"kind":"cross_only","probe":{"masked":true},"gallery":{"masked":false}},"scope":{},"fpr_targets":[0.0001],"group_breakdown":false}"#
        );
        let back: ProtocolSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
