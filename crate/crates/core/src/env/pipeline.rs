//! Stage-1 action to stage-2 masks, and the rewards of the result.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::config::EnvConfig;
use super::episode::Episode;
use super::system2::{mock_ground, propagate, DetectionTuple, Phrase, Propagation};
use crate::geometry::BBox;
use crate::matching::frame_alignment_score;
use crate::policy::{KeyframeAction, LocalInstruction};
use crate::protocol::{answer_to_frames, parse_response, serialize_answer, KeyframeAnswer, ParseError};
use crate::rewards::{global_consistency_reward, total_reward, KeyframeComponents, RewardBreakdown, RewardWeights};
use crate::{Error, Result};

/// Everything a rollout produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    pub detections: Vec<DetectionTuple>,
    pub propagation: Propagation,
    pub breakdown: RewardBreakdown,
}

/// Ground every keyframe, propagate and score.
pub fn rollout_pipeline(
    episode: &Episode,
    action: &KeyframeAction,
    rollout_idx: usize,
    env: &EnvConfig,
    weights: &RewardWeights,
    rng: &mut impl Rng,
) -> Result<RolloutOutcome> {
    if action.instructions.len() != action.selected.len() {
        return Err(Error::LengthMismatch {
            expected: action.selected.len(),
            found: action.instructions.len(),
        });
    }
    let phrases: Vec<Phrase> = action
        .selected
        .iter()
        .zip(&action.instructions)
        .map(|(&f, &i)| {
            if f >= episode.frames {
                return Err(Error::FrameOutOfRange {
                    frame: f,
                    frames: episode.frames,
                });
            }
            Ok(Phrase::describe(episode, f, i))
        })
        .collect::<Result<_>>()?;
    rollout_with_phrases(episode, &action.selected, &phrases, rollout_idx, env, weights, rng)
}

/// Like [`rollout_pipeline`] but with grounding phrases already chosen, as
/// when they come from a parsed text response. Repeated frames are allowed.
pub fn rollout_with_phrases(
    episode: &Episode,
    frames: &[usize],
    phrases: &[Phrase],
    rollout_idx: usize,
    env: &EnvConfig,
    weights: &RewardWeights,
    rng: &mut impl Rng,
) -> Result<RolloutOutcome> {
    if frames.is_empty() {
        return Err(Error::EmptySelection);
    }
    if frames.len() != phrases.len() {
        return Err(Error::LengthMismatch {
            expected: frames.len(),
            found: phrases.len(),
        });
    }
    if let Some(&f) = frames.iter().find(|&&f| f >= episode.frames) {
        return Err(Error::FrameOutOfRange {
            frame: f,
            frames: episode.frames,
        });
    }

    let mut detections = Vec::new();
    let mut alignment = 0.0;
    for (&f, phrase) in frames.iter().zip(phrases) {
        let boxes = mock_ground(episode, f, phrase, env.jitter_scale, rng);
        // keyframes where the target is hidden have no GT to align with
        if let Some(gt) = episode.gt_boxes[f] {
            alignment += frame_alignment_score(&boxes, &[gt])?;
        }
        for bbox in boxes {
            detections.push(DetectionTuple {
                roll_out_idx: rollout_idx,
                frame_idx: f,
                pred_obj_idx: detections.len(),
                bbox,
            });
        }
    }
    let r_a = alignment / frames.len() as f64;

    let propagation = propagate(episode, &detections, env.gamma)?;
    let r_g = global_consistency_reward(&propagation.masks, &episode.gt_masks)?;
    let keyframe = KeyframeComponents::compute(frames, &episode.gt_areas(), weights)?;
    let breakdown = total_reward(keyframe, r_a, r_g, weights)?;
    Ok(RolloutOutcome {
        detections,
        propagation,
        breakdown,
    })
}

/// Detections that would make every anchor exact: the target's box on each
/// selected frame where it is visible.
pub fn perfect_anchors(episode: &Episode, frames: &[usize]) -> Vec<DetectionTuple> {
    let boxes: Vec<(usize, BBox)> = frames
        .iter()
        .filter_map(|&f| episode.gt_boxes.get(f).copied().flatten().map(|b| (f, b)))
        .collect();
    boxes
        .into_iter()
        .enumerate()
        .map(|(i, (f, bbox))| DetectionTuple {
            roll_out_idx: 0,
            frame_idx: f,
            pred_obj_idx: i,
            bbox,
        })
        .collect()
}

/// Middle frame of every target visibility segment.
pub fn segment_anchor_frames(episode: &Episode) -> Vec<usize> {
    episode
        .target_segments()
        .iter()
        .map(|s| s.start + (s.len() - 1) / 2)
        .collect()
}

/// Hand-built reference action: fully specific instructions, keyframes
/// added greedily by total reward, up to `k` frames.
pub fn oracle_action(episode: &Episode, k: usize, env: &EnvConfig, weights: &RewardWeights) -> Result<KeyframeAction> {
    let k = k.clamp(1, episode.frames);
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for f in 0..episode.frames {
            if chosen.contains(&f) {
                continue;
            }
            let mut frames = chosen.clone();
            frames.push(f);
            let score = noiseless_reward(episode, &frames, env, weights)?;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((f, score));
            }
        }
        chosen.push(best.ok_or(Error::EmptySelection)?.0);
    }
    Ok(KeyframeAction {
        instructions: vec![LocalInstruction::all(); chosen.len()],
        selected: chosen,
        logprob: 0.0,
    })
}

/// Total reward of `frames` with fully specific instructions. Those
/// instructions always match the target alone, so no jitter is drawn.
pub fn noiseless_reward(episode: &Episode, frames: &[usize], env: &EnvConfig, weights: &RewardWeights) -> Result<f64> {
    let phrases: Vec<Phrase> = frames
        .iter()
        .map(|&f| Phrase::describe(episode, f, LocalInstruction::all()))
        .collect();
    let mut rng = crate::seed::rng_for(episode.seed, crate::seed::Stream::Eval, 0, 0);
    Ok(
        rollout_with_phrases(episode, frames, &phrases, 0, env, weights, &mut rng)?
            .breakdown
            .r_total,
    )
}

/// Response text the selector would emit for `action`.
pub fn response_for_action(episode: &Episode, action: &KeyframeAction) -> String {
    let descriptions: Vec<String> = action
        .selected
        .iter()
        .zip(&action.instructions)
        .map(|(&f, &i)| Phrase::describe(episode, f.min(episode.frames - 1), i).to_text(&episode.colors))
        .collect();
    let answer = KeyframeAnswer::from_frames(
        &action.selected,
        &descriptions,
        episode.frames,
        episode.duration_secs(),
        "",
    );
    serialize_answer(&answer)
}

/// Score a text response. A response that fails to parse comes back as the
/// inner error; the caller decides what it is worth.
pub fn rollout_from_response(
    episode: &Episode,
    response: &str,
    rollout_idx: usize,
    env: &EnvConfig,
    weights: &RewardWeights,
    rng: &mut impl Rng,
) -> Result<core::result::Result<RolloutOutcome, ParseError>> {
    let answer = match parse_response(response, episode.duration_secs()) {
        Ok(a) => a,
        Err(e) => return Ok(Err(e)),
    };
    let frames = answer_to_frames(&answer, episode.frames, episode.duration_secs());
    let phrases: Vec<Phrase> = answer
        .entries
        .iter()
        .map(|e| Phrase::parse(&e.description, &episode.colors))
        .collect();
    rollout_with_phrases(episode, &frames, &phrases, rollout_idx, env, weights, rng).map(Ok)
}
