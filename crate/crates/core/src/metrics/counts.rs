use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::simsel::PairUniverse;
use crate::types::{Manifest, ProtocolSpec};

/// Exact pair counts of one protocol scope.
///
/// `n_negative_engine` counts unordered cross-identity pairs, the universe
/// the engine scores and thresholds on. `n_negative_paper` follows the
/// published test-set statistics, which count all ordered image pairs minus
/// the unordered positives: `N(N-1) - positives`. The two coincide for
/// probe × gallery protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub n_images: u64,
    pub n_positive: u64,
    pub n_negative_engine: u64,
    pub n_negative_paper: u64,
}

impl PairStats {
    pub fn all_pairs(n_images: u64, n_positive: u64) -> Self {
        let unordered = n_images * n_images.saturating_sub(1) / 2;
        PairStats {
            n_images,
            n_positive,
            n_negative_engine: unordered - n_positive,
            n_negative_paper: n_images * n_images.saturating_sub(1) - n_positive,
        }
    }

    pub fn cross(n_probes: u64, n_gallery: u64, n_positive: u64) -> Self {
        let neg = n_probes * n_gallery - n_positive;
        PairStats {
            n_images: n_probes + n_gallery,
            n_positive,
            n_negative_engine: neg,
            n_negative_paper: neg,
        }
    }
}

pub fn count_pairs(manifest: &Manifest, protocol: &ProtocolSpec) -> Result<PairStats> {
    let universe = PairUniverse::resolve(manifest, protocol)?;
    Ok(count_universe(manifest, &universe))
}

pub(crate) fn count_universe(manifest: &Manifest, universe: &PairUniverse) -> PairStats {
    let ident = manifest.identity_index();
    let per_identity = |rows: &[u32]| {
        let mut counts = vec![0u64; manifest.n_identities()];
        for &r in rows {
            counts[ident[r as usize] as usize] += 1;
        }
        counts
    };
    match universe {
        PairUniverse::Symmetric { rows } => {
            let positives = per_identity(rows)
                .iter()
                .map(|&n| n * n.saturating_sub(1) / 2)
                .sum();
            PairStats::all_pairs(rows.len() as u64, positives)
        }
        PairUniverse::Cross { probes, gallery } => {
            let p = per_identity(probes);
            let g = per_identity(gallery);
            let positives = p.iter().zip(&g).map(|(a, b)| a * b).sum();
            PairStats::cross(probes.len() as u64, gallery.len() as u64, positives)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Group, ImageRecord, Role};

    fn rec(i: usize, identity: &str, masked: bool) -> ImageRecord {
        ImageRecord {
            image_id: format!("img{i}"),
            identity_id: identity.into(),
            group: Group::None,
            masked,
            role: Role::Any,
            subset: String::new(),
        }
    }

    #[test]
    fn one_identity_two_images() {
        let m = Manifest::new("t", vec![rec(0, "a", false), rec(1, "a", false)]).unwrap();
        let s = count_pairs(&m, &ProtocolSpec::all_pairs("p", vec![0.1])).unwrap();
        assert_eq!(s.n_positive, 1);
        assert_eq!(s.n_negative_engine, 0);
        assert_eq!(s.n_negative_paper, 1);
    }

    #[test]
    fn children_row_closure() {
        let s = PairStats::all_pairs(157_280, 1_773_428);
        assert_eq!(s.n_negative_paper, 24_735_067_692);
        assert_eq!(s.n_positive + s.n_negative_engine, 157_280 * 157_279 / 2);
    }

    #[test]
    fn masked_layout_counts() {
        // 1 masked + 2 non-masked per identity.
        let mut records = Vec::new();
        for id in 0..4 {
            for j in 0..3 {
                records.push(rec(id * 3 + j, &format!("id{id}"), j == 0));
            }
        }
        let m = Manifest::new("t", records).unwrap();
        let s = count_pairs(&m, &ProtocolSpec::masked(vec![0.1])).unwrap();
        assert_eq!(s.n_positive, 8);
        assert_eq!(s.n_negative_engine, 4 * 8 - 8);
        assert_eq!(s.n_images, 12);
    }
}
