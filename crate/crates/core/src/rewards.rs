//! Hierarchical reward stack: keyframe quality (`R_K`), box alignment
//! (`R_A`, computed in [`crate::matching`]), global mask consistency (`R_G`)
//! and their weighted total.

use serde::{Deserialize, Serialize};

use crate::geometry::MaskSequence;
use crate::{Error, Result};

/// Mixing weights and shape parameters of the reward stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub lambda_diversity: f64,
    pub lambda_num: f64,
    pub lambda_saliency: f64,
    pub alpha_k: f64,
    pub alpha_a: f64,
    pub alpha_g: f64,
    /// Coefficient per overlapping consecutive pair; negative to punish.
    pub overlap_punish: f64,
    /// Coefficient per selected frame that does not start an overlap.
    pub dist_reward: f64,
    /// Target keyframe count.
    pub k0: usize,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda_diversity: 1.0 / 3.0,
            lambda_num: 1.0 / 3.0,
            lambda_saliency: 1.0 / 3.0,
            alpha_k: 1.0 / 3.0,
            alpha_a: 1.0 / 3.0,
            alpha_g: 1.0 / 3.0,
            overlap_punish: -0.2,
            dist_reward: 0.25,
            k0: 4,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("rewards.lambda_diversity", self.lambda_diversity),
            ("rewards.lambda_num", self.lambda_num),
            ("rewards.lambda_saliency", self.lambda_saliency),
            ("rewards.alpha_k", self.alpha_k),
            ("rewards.alpha_a", self.alpha_a),
            ("rewards.alpha_g", self.alpha_g),
            ("rewards.dist_reward", self.dist_reward),
        ];
        for (key, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, "must be a finite non-negative number"));
            }
        }
        if !self.overlap_punish.is_finite() {
            return Err(Error::config("rewards.overlap_punish", "must be finite"));
        }
        if self.lambda_diversity + self.lambda_num + self.lambda_saliency <= 0.0 {
            return Err(Error::config("rewards.lambda_*", "lambda weights sum to zero"));
        }
        if self.alpha_k + self.alpha_a + self.alpha_g <= 0.0 {
            return Err(Error::config("rewards.alpha_*", "alpha weights sum to zero"));
        }
        if self.k0 == 0 {
            return Err(Error::config("rewards.k0", "must be at least 1"));
        }
        Ok(())
    }
}

/// Overlap punishment plus distribution reward over the sorted selection.
///
/// A consecutive sorted pair with the same frame index is one overlap; every
/// other position earns `dist_reward`.
pub fn diversity_reward(selected: &[usize], overlap_punish: f64, dist_reward: f64) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    let overlaps = sorted.windows(2).filter(|w| w[0] == w[1]).count();
    let distinct = sorted.len() - overlaps;
    Ok(overlap_punish * overlaps as f64 + dist_reward * distinct as f64)
}

/// Triangular count regularizer peaking at `k0`.
pub fn frame_count_reward(k: usize, k0: usize) -> f64 {
    if k0 == 0 {
        return 0.0;
    }
    let off = (k as f64 - k0 as f64).abs() / k0 as f64;
    (1.0 - off).max(0.0)
}

/// Mean ground-truth area of the selected frames, normalized by the largest
/// area in the episode.
pub fn saliency_reward(selected: &[usize], gt_areas: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let max = gt_areas.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::DegenerateSaliency);
    }
    let mut sum = 0.0;
    for &f in selected {
        let area = *gt_areas.get(f).ok_or(Error::FrameOutOfRange {
            frame: f,
            frames: gt_areas.len(),
        })?;
        sum += area as f64 / max as f64;
    }
    Ok(sum / selected.len() as f64)
}

/// The three keyframe-quality components, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeComponents {
    pub diversity: f64,
    pub num: f64,
    pub saliency: f64,
}

impl KeyframeComponents {
    pub fn compute(selected: &[usize], gt_areas: &[usize], weights: &RewardWeights) -> Result<Self> {
        Ok(KeyframeComponents {
            diversity: diversity_reward(selected, weights.overlap_punish, weights.dist_reward)?,
            num: frame_count_reward(selected.len(), weights.k0),
            saliency: saliency_reward(selected, gt_areas)?,
        })
    }

    pub fn weighted(&self, weights: &RewardWeights) -> f64 {
        weights.lambda_diversity * self.diversity
            + weights.lambda_num * self.num
            + weights.lambda_saliency * self.saliency
    }
}

/// `R_K` for a selection.
pub fn keyframe_quality_reward(selected: &[usize], gt_areas: &[usize], weights: &RewardWeights) -> Result<f64> {
    Ok(KeyframeComponents::compute(selected, gt_areas, weights)?.weighted(weights))
}

/// `R_G`: mean per-frame mask IoU over the whole episode.
pub fn global_consistency_reward(pred: &MaskSequence, gt: &MaskSequence) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, found: 0 });
    }
    let ious = pred.frame_ious(gt)?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Every reward component of one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_diversity: f64,
    pub r_num: f64,
    pub r_saliency: f64,
    pub r_k: f64,
    pub r_a: f64,
    pub r_g: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    /// All-zero breakdown assigned to rollouts whose response failed to parse.
    pub fn failed() -> Self {
        RewardBreakdown::default()
    }
}

/// Fill a breakdown from raw components.
pub fn total_reward(
    keyframe: KeyframeComponents,
    r_a: f64,
    r_g: f64,
    weights: &RewardWeights,
) -> Result<RewardBreakdown> {
    weights.validate()?;
    let r_k = keyframe.weighted(weights);
    let r_total = weights.alpha_k * r_k + weights.alpha_a * r_a + weights.alpha_g * r_g;
    if !r_total.is_finite() {
        return Err(Error::NonFinite("total reward"));
    }
    Ok(RewardBreakdown {
        r_diversity: keyframe.diversity,
        r_num: keyframe.num,
        r_saliency: keyframe.saliency,
        r_k,
        r_a,
        r_g,
        r_total,
    })
}

/// Mean of each field over a set of breakdowns.
pub fn mean_breakdown(items: &[RewardBreakdown]) -> RewardBreakdown {
    if items.is_empty() {
        return RewardBreakdown::default();
    }
    let n = items.len() as f64;
    let sum = |f: fn(&RewardBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    RewardBreakdown {
        r_diversity: sum(|b| b.r_diversity),
        r_num: sum(|b| b.r_num),
        r_saliency: sum(|b| b.r_saliency),
        r_k: sum(|b| b.r_k),
        r_a: sum(|b| b.r_a),
        r_g: sum(|b| b.r_g),
        r_total: sum(|b| b.r_total),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BinaryMask;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn diversity_examples() {
        assert_abs_diff_eq!(
            diversity_reward(&[0, 3, 7, 9], -0.2, 0.25).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            diversity_reward(&[3, 3, 7, 9], -0.2, 0.25).unwrap(),
            0.55,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            diversity_reward(&[5, 5, 5, 5], -0.2, 0.25).unwrap(),
            -0.35,
            epsilon = 1e-12
        );
        assert_eq!(diversity_reward(&[], -0.2, 0.25), Err(Error::EmptySelection));
    }

    #[test]
    fn count_examples() {
        assert_eq!(frame_count_reward(4, 4), 1.0);
        assert_eq!(frame_count_reward(2, 4), 0.5);
        assert_eq!(frame_count_reward(8, 4), 0.0);
        assert_eq!(frame_count_reward(12, 4), 0.0);
    }

    #[test]
    fn saliency_examples() {
        let areas = [10, 20, 40, 5, 0];
        assert_eq!(saliency_reward(&[2, 2], &areas).unwrap(), 1.0);
        assert_abs_diff_eq!(saliency_reward(&[1, 2], &areas).unwrap(), 0.75, epsilon = 1e-12);
        assert_eq!(saliency_reward(&[4], &areas).unwrap(), 0.0);
        assert_eq!(saliency_reward(&[0], &[0, 0]), Err(Error::DegenerateSaliency));
        assert!(matches!(
            saliency_reward(&[9], &areas),
            Err(Error::FrameOutOfRange { .. })
        ));
    }

    #[test]
    fn keyframe_quality_examples() {
        let w = RewardWeights::default();
        let c = KeyframeComponents {
            diversity: 1.0,
            num: 1.0,
            saliency: 1.0,
        };
        assert_abs_diff_eq!(c.weighted(&w), 1.0, epsilon = 1e-12);
        let c = KeyframeComponents {
            diversity: 0.55,
            num: 1.0,
            saliency: 0.75,
        };
        assert_abs_diff_eq!(c.weighted(&w), 0.766_666_666_666_666_7, epsilon = 1e-12);
        let only_num = RewardWeights {
            lambda_diversity: 0.0,
            lambda_num: 1.0,
            lambda_saliency: 0.0,
            ..RewardWeights::default()
        };
        let r = keyframe_quality_reward(&[1, 1, 2, 3], &[1, 2, 3, 4], &only_num).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn consistency_examples() {
        let full = BinaryMask::full(4, 4);
        let left = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let top = BinaryMask::from_fn(4, 4, |_, y| y < 2);
        let gt = MaskSequence::new(vec![full.clone(), left.clone()]).unwrap();
        assert_eq!(global_consistency_reward(&gt, &gt).unwrap(), 1.0);
        let pred = MaskSequence::new(vec![full, top]).unwrap();
        assert_abs_diff_eq!(
            global_consistency_reward(&pred, &gt).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        let short = MaskSequence::new(vec![left]).unwrap();
        assert!(global_consistency_reward(&short, &gt).is_err());
    }

    #[test]
    fn consistency_counts_absent_frames_literally() {
        let visible = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        let elsewhere = BinaryMask::from_fn(4, 4, |x, _| x >= 2);
        let empty = BinaryMask::empty(4, 4);
        let gt = MaskSequence::new(vec![visible.clone(), empty.clone(), visible]).unwrap();
        let pred = MaskSequence::new(vec![elsewhere.clone(), empty, elsewhere]).unwrap();
        assert_abs_diff_eq!(
            global_consistency_reward(&pred, &gt).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn total_examples() {
        let w = RewardWeights::default();
        let ones = KeyframeComponents {
            diversity: 1.0,
            num: 1.0,
            saliency: 1.0,
        };
        assert_abs_diff_eq!(total_reward(ones, 1.0, 1.0, &w).unwrap().r_total, 1.0, epsilon = 1e-12);
        let g_only = RewardWeights {
            alpha_k: 0.0,
            alpha_a: 0.0,
            alpha_g: 1.0,
            ..w.clone()
        };
        assert_eq!(total_reward(ones, 0.3, 0.9, &g_only).unwrap().r_total, 0.9);
        let c = KeyframeComponents {
            diversity: 0.55,
            num: 1.0,
            saliency: 0.75,
        };
        let b = total_reward(c, 0.75, 0.9, &w).unwrap();
        assert_abs_diff_eq!(b.r_total, 0.805_555_555_555_555_6, epsilon = 1e-12);
    }

    #[test]
    fn invalid_weights_rejected() {
        let w = RewardWeights {
            alpha_k: 0.0,
            alpha_a: 0.0,
            alpha_g: 0.0,
            ..RewardWeights::default()
        };
        assert!(w.validate().is_err());
        let w = RewardWeights {
            dist_reward: -1.0,
            ..RewardWeights::default()
        };
        assert!(matches!(w.validate(), Err(Error::InvalidConfig { .. })));
    }

    proptest! {
        #[test]
        fn diversity_closed_form(sel in proptest::collection::vec(0usize..12, 1..10), p in -1.0f64..0.0, d in 0.0f64..1.0) {
            let mut sorted = sel.clone();
            sorted.sort();
            let overlaps = sorted.windows(2).filter(|w| w[0] == w[1]).count() as f64;
            let closed = (p - d) * overlaps + d * sel.len() as f64;
            let r = diversity_reward(&sel, p, d).unwrap();
            prop_assert!((r - closed).abs() < 1e-12);
            let mut rev = sel.clone();
            rev.reverse();
            prop_assert_eq!(r, diversity_reward(&rev, p, d).unwrap());
        }

        #[test]
        fn saliency_monotone_in_area(areas in proptest::collection::vec(0usize..50, 2..10), i in 0usize..10, j in 0usize..10) {
            prop_assume!(areas.iter().any(|&a| a > 0));
            let (i, j) = (i % areas.len(), j % areas.len());
            let s = saliency_reward(&[i, 0], &areas).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            if areas[j] > areas[i] {
                prop_assert!(saliency_reward(&[j, 0], &areas).unwrap() >= s);
            }
        }

        #[test]
        fn convex_total_is_between_components(rk in 0.0f64..1.0, ra in 0.0f64..1.0, rg in 0.0f64..1.0, a in 0.01f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
            let s = a + b + c;
            let w = RewardWeights { alpha_k: a / s, alpha_a: b / s, alpha_g: c / s, lambda_diversity: 0.0, lambda_num: 1.0, lambda_saliency: 0.0, ..RewardWeights::default() };
            let k = KeyframeComponents { diversity: 0.0, num: rk, saliency: 0.0 };
            let t = total_reward(k, ra, rg, &w).unwrap().r_total;
            prop_assert!(t >= rk.min(ra).min(rg) - 1e-12 && t <= rk.max(ra).max(rg) + 1e-12);
        }
    }
}
