use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simsel::SelectionState;

/// TPR at one FPR target. The threshold is the k-th largest negative score
/// (the largest when k = 0) and a pair is accepted when its score is
/// strictly greater, so `false_accepts <= k` always holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fpr_target: f64,
    pub k: u64,
    pub threshold: f32,
    pub true_accepts: u64,
    pub false_accepts: u64,
    pub tpr: f64,
    /// TPR in percent, rounded to three decimals.
    pub tpr_percent: f64,
    pub achieved_fpr: f64,
}

/// Number of negatives allowed above the threshold: `floor(target * n)`.
///
/// Targets are decimal quantities, so a product within a relative 1e-9 of
/// an integer snaps to it (1e-6 × 2,000,000 is 2, not 1).
pub fn negatives_allowed(fpr_target: f64, n_negative: u64) -> u64 {
    let x = fpr_target * n_negative as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.floor() as u64
    }
}

/// Size of the top-k buffer needed to serve every target.
pub(crate) fn selection_size(targets: &[f64], n_negative: u64) -> usize {
    targets
        .iter()
        .map(|&t| negatives_allowed(t, n_negative).max(1) as usize)
        .max()
        .unwrap_or(1)
}

pub(crate) fn percent3(hits: u64, total: u64) -> f64 {
    (hits as f64 * 100_000.0 / total as f64).round() / 1000.0
}

/// Builds the operating point from the positive scores and the largest
/// negatives in descending order (`top_desc` must hold at least
/// `max(k, 1)` values).
pub(crate) fn operating_point(
    positives: &[f32],
    top_desc: &[f32],
    n_negative: u64,
    fpr_target: f64,
) -> OperatingPoint {
    let k = negatives_allowed(fpr_target, n_negative);
    let threshold = top_desc[k.max(1) as usize - 1];
    let false_accepts = top_desc.iter().take_while(|&&v| v > threshold).count() as u64;
    let true_accepts = positives.iter().filter(|&&p| p > threshold).count() as u64;
    let n_pos = positives.len() as u64;
    OperatingPoint {
        fpr_target,
        k,
        threshold,
        true_accepts,
        false_accepts,
        tpr: true_accepts as f64 / n_pos as f64,
        tpr_percent: percent3(true_accepts, n_pos),
        achieved_fpr: false_accepts as f64 / n_negative as f64,
    }
}

/// TPR at an FPR target over a streamed negative set.
pub fn tpr_at_fpr(
    positives: &[f32],
    negatives: impl IntoIterator<Item = f32>,
    n_negative: u64,
    fpr_target: f64,
) -> Result<OperatingPoint> {
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return Err(Error::FprTarget(fpr_target));
    }
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    if n_negative == 0 {
        return Err(Error::EmptyNegatives);
    }
    let mut sel = SelectionState::new(selection_size(&[fpr_target], n_negative))?;
    for s in negatives {
        if !s.is_finite() {
            return Err(Error::NonFiniteScore);
        }
        sel.push(s);
    }
    if sel.seen() == 0 {
        return Err(Error::EmptyNegatives);
    }
    if sel.seen() != n_negative {
        return Err(Error::NegativeCountMismatch {
            expected: n_negative,
            seen: sel.seen(),
        });
    }
    Ok(operating_point(positives, &sel.sorted_desc(), n_negative, fpr_target))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEG: [f32; 10] = [0.6, 0.4, 0.3, 0.2, 0.1, 0.0, -0.1, -0.2, -0.3, -0.4];

    #[test]
    fn hand_enumerated_targets() {
        let p = tpr_at_fpr(&[0.9, 0.5], NEG, 10, 0.1).unwrap();
        assert_eq!((p.k, p.threshold, p.tpr), (1, 0.6, 0.5));
        assert_eq!(p.false_accepts, 0);
        let p = tpr_at_fpr(&[0.9, 0.5], NEG, 10, 0.2).unwrap();
        assert_eq!((p.k, p.threshold, p.tpr), (2, 0.4, 1.0));
        assert_eq!(p.false_accepts, 1);
        assert_eq!(p.achieved_fpr, 0.1);
        assert_eq!(p.tpr_percent, 100.0);
    }

    #[test]
    fn perfect_separation() {
        for t in [1e-3, 0.05, 0.5, 0.99] {
            let p = tpr_at_fpr(&[0.8, 0.7], NEG.map(|v| v * 0.5), 10, t).unwrap();
            assert_eq!(p.tpr, 1.0);
        }
    }

    #[test]
    fn target_below_one_negative_uses_max() {
        let p = tpr_at_fpr(&[0.61, 0.59], NEG, 10, 0.05).unwrap();
        assert_eq!(p.k, 0);
        assert_eq!(p.threshold, 0.6);
        assert_eq!(p.true_accepts, 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(tpr_at_fpr(&[], NEG, 10, 0.1), Err(Error::EmptyPositives)));
        assert!(matches!(
            tpr_at_fpr(&[0.1], std::iter::empty(), 1, 0.1),
            Err(Error::EmptyNegatives)
        ));
        assert!(matches!(
            tpr_at_fpr(&[0.1], NEG, 11, 0.1),
            Err(Error::NegativeCountMismatch { expected: 11, seen: 10 })
        ));
        assert!(matches!(tpr_at_fpr(&[0.1], NEG, 10, 1.0), Err(Error::FprTarget(_))));
    }

    #[test]
    fn decimal_targets_snap() {
        assert_eq!(negatives_allowed(1e-6, 2_000_000), 2);
        assert_eq!(negatives_allowed(1e-6, 1_999_999), 1);
        assert_eq!(negatives_allowed(1e-4, 96_980_664), 9698);
        assert_eq!(negatives_allowed(0.3, 10), 3);
        assert_eq!(negatives_allowed(1e-6, 10), 0);
    }

    #[test]
    fn percent_rounding() {
        assert_eq!(percent3(1, 3), 33.333);
        assert_eq!(percent3(2, 3), 66.667);
        assert_eq!(percent3(0, 3), 0.0);
    }
}
