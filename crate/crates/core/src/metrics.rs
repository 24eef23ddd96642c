//! Region similarity `J`, boundary accuracy `F`, and the evaluation harness.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{oracle_action, rollout_pipeline, EnvConfig, Episode};
use crate::geometry::{BinaryMask, MaskSequence};
use crate::policy::{greedy_action, sample_action, KeyframeAction, PolicyParams, PolicyShape};
use crate::rewards::{global_consistency_reward, RewardBreakdown, RewardWeights};
use crate::seed::{rng_for, Stream};
use crate::{Error, Result};

/// Mean per-frame mask IoU.
pub fn j_score(pred: &MaskSequence, gt: &MaskSequence) -> Result<f64> {
    global_consistency_reward(pred, gt)
}

/// Boundary F-measure of one frame.
pub fn frame_f_score(pred: &BinaryMask, gt: &BinaryMask, tolerance: usize) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (bp, bg) = (pred.boundary(), gt.boundary());
    let precision = bp.and(&bg.dilated(tolerance))?.area() as f64 / bp.area() as f64;
    let recall = bg.and(&bp.dilated(tolerance))?.area() as f64 / bg.area() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean boundary F-measure over frames.
pub fn f_score(pred: &MaskSequence, gt: &MaskSequence, tolerance: usize) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, found: 0 });
    }
    let mut sum = 0.0;
    for (p, g) in pred.masks().iter().zip(gt.masks()) {
        sum += frame_f_score(p, g, tolerance)?;
    }
    Ok(sum / gt.len() as f64)
}

/// How keyframe actions are chosen during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Argmax decode of the given parameters.
    Greedy,
    /// Uniformly random keyframes, count and instructions.
    Uniform,
    /// Hand-built reference actions.
    Oracle,
}

/// Per-episode evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub breakdown: RewardBreakdown,
    pub selected: Vec<usize>,
    /// Visibility segments of the target.
    pub segments: usize,
    /// Segments holding at least one keyframe.
    pub segments_hit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub selector: Selector,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    /// Share of multi-segment episodes whose keyframes land in at least two
    /// segments, with the number of such episodes.
    pub fn multi_segment_hit_rate(&self) -> (f64, usize) {
        let multi: Vec<&EpisodeRecord> = self.episodes.iter().filter(|e| e.segments >= 2).collect();
        if multi.is_empty() {
            return (0.0, 0);
        }
        let hits = multi.iter().filter(|e| e.segments_hit >= 2).count();
        (hits as f64 / multi.len() as f64, multi.len())
    }
}

/// Settings shared by every evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings<'a> {
    pub env: &'a EnvConfig,
    pub weights: &'a RewardWeights,
    /// Boundary tolerance in pixels.
    pub f_tolerance: usize,
}

/// Score `selector` on every episode of `corpus`.
pub fn evaluate(
    params: &PolicyParams,
    corpus: &[Episode],
    settings: &EvalSettings,
    selector: Selector,
) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let uniform = PolicyParams::zeros(PolicyShape::new(params.w_count.len()));
    let mut episodes = Vec::with_capacity(corpus.len());
    for ep in corpus {
        let mut rng = rng_for(ep.seed, Stream::Eval, 0, 0);
        let action: KeyframeAction = match selector {
            Selector::Greedy => greedy_action(params, &ep.observations)?,
            Selector::Uniform => sample_action(&uniform, &ep.observations, &mut rng)?,
            Selector::Oracle => oracle_action(ep, settings.weights.k0, settings.env, settings.weights)?,
        };
        let out = rollout_pipeline(ep, &action, 0, settings.env, settings.weights, &mut rng)?;
        let j = j_score(&out.propagation.masks, &ep.gt_masks)?;
        let f = f_score(&out.propagation.masks, &ep.gt_masks, settings.f_tolerance)?;
        let segments = ep.target_segments();
        let segments_hit = segments
            .iter()
            .filter(|s| action.selected.iter().any(|&t| s.contains(t)))
            .count();
        episodes.push(EpisodeRecord {
            seed: ep.seed,
            j,
            f,
            jf: (j + f) / 2.0,
            breakdown: out.breakdown,
            selected: action.selected,
            segments: segments.len(),
            segments_hit,
        });
    }
    let n = episodes.len() as f64;
    let j_mean = episodes.iter().map(|e| e.j).sum::<f64>() / n;
    let f_mean = episodes.iter().map(|e| e.f).sum::<f64>() / n;
    Ok(EvalReport {
        selector,
        j_mean,
        f_mean,
        jf_mean: (j_mean + f_mean) / 2.0,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_episode;
    use crate::grpo::{init_params, GrpoConfig};
    use alloc::vec;
    use proptest::prelude::*;

    fn square(x0: usize, y0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(16, 16, |x, y| {
            (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
        })
    }

    #[test]
    fn j_examples() {
        let a = MaskSequence::new(vec![square(2, 2, 4), square(2, 2, 4)]).unwrap();
        assert_eq!(j_score(&a, &a).unwrap(), 1.0);
        // second frame: 4x4 inside a 4x12 strip, IoU 16/48
        let strip = BinaryMask::from_fn(16, 16, |x, y| (2..6).contains(&x) && (2..14).contains(&y));
        let b = MaskSequence::new(vec![square(2, 2, 4), strip]).unwrap();
        assert!((j_score(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(j_score(&a, &b).unwrap(), global_consistency_reward(&a, &b).unwrap());
    }

    #[test]
    fn f_examples() {
        let a = MaskSequence::new(vec![square(3, 3, 6)]).unwrap();
        assert_eq!(f_score(&a, &a, 1).unwrap(), 1.0);
        let empty = MaskSequence::empty(3, 16, 16);
        assert_eq!(f_score(&empty, &empty, 1).unwrap(), 1.0);
        let shifted = MaskSequence::new(vec![square(4, 3, 6)]).unwrap();
        assert_eq!(f_score(&shifted, &a, 1).unwrap(), 1.0);
        assert!(f_score(&shifted, &a, 0).unwrap() < 1.0);
        let none = MaskSequence::empty(1, 16, 16);
        assert_eq!(f_score(&none, &a, 1).unwrap(), 0.0);
        assert!(f_score(&empty, &a, 1).is_err());
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(any::<bool>(), 64).prop_map(|bits| BinaryMask::from_bits(8, 8, &bits).unwrap())
    }

    proptest! {
        #[test]
        fn f_is_symmetric_and_bounded(a in mask_strategy(), b in mask_strategy(), tol in 0usize..3) {
            let fa = frame_f_score(&a, &b, tol).unwrap();
            let fb = frame_f_score(&b, &a, tol).unwrap();
            prop_assert!((fa - fb).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&fa));
        }

        #[test]
        fn j_matches_consistency_reward(a in proptest::collection::vec(mask_strategy(), 1..4), b in proptest::collection::vec(mask_strategy(), 1..4)) {
            let n = a.len().min(b.len());
            let pa = MaskSequence::new(a[..n].to_vec()).unwrap();
            let pb = MaskSequence::new(b[..n].to_vec()).unwrap();
            prop_assert_eq!(j_score(&pa, &pb).unwrap(), global_consistency_reward(&pa, &pb).unwrap());
        }
    }

    fn corpus(n: u64) -> (Vec<Episode>, EnvConfig) {
        let env = EnvConfig::default().for_inference();
        ((0..n).map(|s| generate_episode(&env, 500 + s).unwrap()).collect(), env)
    }

    #[test]
    fn oracle_sets_the_ceiling_and_reports_are_consistent() {
        let (eps, env) = corpus(20);
        let w = RewardWeights::default();
        let settings = EvalSettings {
            env: &env,
            weights: &w,
            f_tolerance: 1,
        };
        let params = init_params(&GrpoConfig::default(), 0).unwrap();
        let oracle = evaluate(&params, &eps, &settings, Selector::Oracle).unwrap();
        assert!(oracle.jf_mean >= 0.9, "{}", oracle.jf_mean);
        for sel in [Selector::Greedy, Selector::Uniform, Selector::Oracle] {
            let r = evaluate(&params, &eps, &settings, sel).unwrap();
            assert_eq!(r, evaluate(&params, &eps, &settings, sel).unwrap());
            assert!((r.jf_mean - (r.j_mean + r.f_mean) / 2.0).abs() <= 1e-12);
            assert!(r.jf_mean <= oracle.jf_mean + 1e-12);
            assert!(r.episodes.iter().all(|e| e.segments_hit <= e.segments));
        }
        assert_eq!(
            evaluate(&params, &[], &settings, Selector::Greedy),
            Err(Error::EmptyCorpus)
        );
    }
}
