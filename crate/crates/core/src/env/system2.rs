//! Mock System 2: attribute grounding and anchor-based mask propagation.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::{Attribute, Episode};
use crate::geometry::{box_iou, BBox, BinaryMask, MaskSequence};
use crate::math::{powi, round};
use crate::policy::{AttributeSlot, LocalInstruction};
use crate::Result;

/// Concrete grounding description: attribute values an object must all carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub attributes: Vec<Attribute>,
}

impl Phrase {
    /// Describe the target on `frame` using the slots of `instruction`.
    pub fn describe(episode: &Episode, frame: usize, instruction: LocalInstruction) -> Phrase {
        let target = episode.target_object();
        let x = target.trajectory[frame].0;
        let attributes = instruction
            .slots()
            .map(|slot| target.appearance.value(slot, x, episode.grid))
            .collect();
        Phrase { attributes }
    }

    /// Words in color, size, shape, position order, e.g. `"red large circle on the left"`.
    pub fn to_text(&self, colors: &[String]) -> String {
        let order = [
            AttributeSlot::Color,
            AttributeSlot::Size,
            AttributeSlot::Shape,
            AttributeSlot::Position,
        ];
        let mut words: Vec<&str> = Vec::new();
        for slot in order {
            for a in self.attributes.iter().filter(|a| a.slot() == slot) {
                if slot == AttributeSlot::Position {
                    words.push(if a.word(colors) == "middle" { "in the" } else { "on the" });
                }
                words.push(a.word(colors));
            }
        }
        if words.is_empty() {
            return "object".into();
        }
        words.join(" ")
    }

    /// Keep the known attribute words of `text`. Without any, the phrase
    /// matches every visible object.
    pub fn parse(text: &str, colors: &[String]) -> Phrase {
        let attributes = text
            .split(|c: char| !c.is_alphanumeric())
            .filter_map(|w| Attribute::from_word(w, colors))
            .collect();
        Phrase { attributes }
    }

    pub fn matches(&self, episode: &Episode, object: usize, frame: usize) -> bool {
        let o = &episode.objects[object];
        self.attributes.iter().all(|a| o.has(*a, frame, episode.grid))
    }
}

/// Ground `phrase` on `frame`: the boxes of every visible object matching it,
/// jittered more the less specific the phrase is.
pub fn mock_ground(
    episode: &Episode,
    frame: usize,
    phrase: &Phrase,
    jitter_scale: f64,
    rng: &mut impl Rng,
) -> Vec<BBox> {
    if frame >= episode.frames {
        return Vec::new();
    }
    let hits: Vec<BBox> = (0..episode.objects.len())
        .filter(|&o| phrase.matches(episode, o, frame))
        .filter_map(|o| episode.render_at(o, frame).map(|r| r.bbox))
        .collect();
    let specificity = 1.0 / hits.len().max(1) as f64;
    let amount = jitter_scale * (1.0 - specificity);
    hits.into_iter()
        .map(|b| {
            if amount <= 0.0 {
                return b;
            }
            let (w, h) = (b.width(), b.height());
            let mut j = |side: f64| rng.random_range(-1.0..=1.0) * amount * side;
            let (x1, y1, x2, y2) = (b.x1() + j(w), b.y1() + j(h), b.x2() + j(w), b.y2() + j(h));
            BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2))
                .ok()
                .and_then(|jb| jb.clamped(episode.grid, episode.grid))
                .unwrap_or(b)
        })
        .collect()
}

/// Identifier routing one detection through propagation and back to scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionTuple {
    pub roll_out_idx: usize,
    pub frame_idx: usize,
    pub pred_obj_idx: usize,
    pub bbox: BBox,
}

/// One propagated track per detection tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// Position of the seeding tuple in the anchor list; doubles as the mask id.
    pub mask_id: usize,
    /// Object the track latched onto, `None` when the anchor was ignored or
    /// overlapped nothing.
    pub object: Option<usize>,
    /// IoU of the anchor box against the latched object's box.
    pub quality: f64,
    /// Target visibility segment the track lives in.
    pub span: Option<(usize, usize)>,
}

/// Result of [`propagate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub masks: MaskSequence,
    pub tracks: Vec<Track>,
    /// Mask id of each anchor, in anchor order.
    pub mapping: Vec<(DetectionTuple, usize)>,
    /// Anchors dropped because the target is hidden on their frame.
    pub ignored: Vec<DetectionTuple>,
}

impl Propagation {
    pub fn tuple_for(&self, mask_id: usize) -> Option<&DetectionTuple> {
        self.mapping.iter().find(|(_, id)| *id == mask_id).map(|(t, _)| t)
    }

    pub fn mask_id_for(&self, tuple: &DetectionTuple) -> Option<usize> {
        self.mapping.iter().find(|(t, _)| t == tuple).map(|(_, id)| *id)
    }
}

/// Propagate anchor detections through the episode.
///
/// Each anchor latches onto the visible object its box overlaps most and is
/// tracked through the target visibility segment holding its frame. On frame
/// `t` the nearest track of an object (ties to the better anchor) yields that
/// object's mask eroded to IoU `q * gamma^|t - f|` against the object's true
/// mask. Frames outside the target's visibility stay empty.
pub fn propagate(episode: &Episode, anchors: &[DetectionTuple], gamma: f64) -> Result<Propagation> {
    let target = episode.target_object();
    let mut tracks = Vec::with_capacity(anchors.len());
    let mut ignored = Vec::new();
    for (mask_id, a) in anchors.iter().enumerate() {
        let seg = if a.frame_idx < episode.frames {
            target.segment_at(a.frame_idx)
        } else {
            None
        };
        let Some(seg) = seg else {
            ignored.push(*a);
            tracks.push(Track {
                mask_id,
                object: None,
                quality: 0.0,
                span: None,
            });
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for o in 0..episode.objects.len() {
            if let Some(r) = episode.render_at(o, a.frame_idx) {
                let iou = box_iou(&a.bbox, &r.bbox);
                if iou > 0.0 && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((o, iou));
                }
            }
        }
        tracks.push(Track {
            mask_id,
            object: best.map(|b| b.0),
            quality: best.map_or(0.0, |b| b.1),
            span: Some((seg.start, seg.end)),
        });
    }

    let mut masks = MaskSequence::empty(episode.frames, episode.grid, episode.grid);
    for t in 0..episode.frames {
        for o in 0..episode.objects.len() {
            let Some(render) = episode.render_at(o, t) else {
                continue;
            };
            let nearest = tracks
                .iter()
                .zip(anchors)
                .filter(|(tr, _)| tr.object == Some(o) && tr.span.is_some_and(|(s, e)| s <= t && t < e))
                .map(|(tr, a)| (a.frame_idx.abs_diff(t), tr.quality))
                .min_by(|x, y| x.0.cmp(&y.0).then(y.1.total_cmp(&x.1)));
            let Some((d, q)) = nearest else {
                continue;
            };
            let iou = q * powi(gamma, d as i32);
            let order = &render.erosion_order;
            let keep = (round(iou * order.len() as f64) as usize).min(order.len());
            if keep > 0 {
                let part = BinaryMask::from_cells(episode.grid, episode.grid, &order[..keep]);
                masks.get_mut(t).expect("frame in range").union_with(&part)?;
            }
        }
    }

    let mapping = anchors.iter().copied().zip(0..anchors.len()).collect();
    Ok(Propagation {
        masks,
        tracks,
        mapping,
        ignored,
    })
}
