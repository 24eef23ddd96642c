use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, BinaryMask, MaskSequence};
use crate::policy::{AttributeSlot, FrameObservation};
use crate::Result;

use super::config::MAX_OBJECTS;

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end);
        Interval { start, end }
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBand {
    Small,
    Large,
}

impl SizeBand {
    pub const ALL: [SizeBand; 2] = [SizeBand::Small, SizeBand::Large];

    pub fn word(self) -> &'static str {
        match self {
            SizeBand::Small => "small",
            SizeBand::Large => "large",
        }
    }

    /// Half side length in pixels.
    pub fn half_extent(self) -> f64 {
        match self {
            SizeBand::Small => 4.0,
            SizeBand::Large => 7.0,
        }
    }
}

/// Horizontal third of the grid holding an object's centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionBand {
    Left,
    Middle,
    Right,
}

impl PositionBand {
    pub const ALL: [PositionBand; 3] = [PositionBand::Left, PositionBand::Middle, PositionBand::Right];

    pub fn word(self) -> &'static str {
        match self {
            PositionBand::Left => "left",
            PositionBand::Middle => "middle",
            PositionBand::Right => "right",
        }
    }

    pub fn of(x: f64, grid: usize) -> Self {
        let third = grid as f64 / 3.0;
        if x < third {
            PositionBand::Left
        } else if x < 2.0 * third {
            PositionBand::Middle
        } else {
            PositionBand::Right
        }
    }
}

/// One concrete attribute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    /// Index into the episode's color vocabulary.
    Color(usize),
    Shape(Shape),
    Size(SizeBand),
    Position(PositionBand),
}

impl Attribute {
    pub fn slot(&self) -> AttributeSlot {
        match self {
            Attribute::Color(_) => AttributeSlot::Color,
            Attribute::Shape(_) => AttributeSlot::Shape,
            Attribute::Size(_) => AttributeSlot::Size,
            Attribute::Position(_) => AttributeSlot::Position,
        }
    }

    pub fn word<'a>(&self, colors: &'a [String]) -> &'a str {
        match self {
            Attribute::Color(c) => colors[*c].as_str(),
            Attribute::Shape(s) => s.word(),
            Attribute::Size(s) => s.word(),
            Attribute::Position(p) => p.word(),
        }
    }

    /// Inverse of [`Attribute::word`].
    pub fn from_word(word: &str, colors: &[String]) -> Option<Attribute> {
        if let Some(c) = colors.iter().position(|c| c.eq_ignore_ascii_case(word)) {
            return Some(Attribute::Color(c));
        }
        Shape::ALL
            .into_iter()
            .find(|s| s.word().eq_ignore_ascii_case(word))
            .map(Attribute::Shape)
            .or_else(|| {
                SizeBand::ALL
                    .into_iter()
                    .find(|s| s.word().eq_ignore_ascii_case(word))
                    .map(Attribute::Size)
            })
            .or_else(|| {
                PositionBand::ALL
                    .into_iter()
                    .find(|p| p.word().eq_ignore_ascii_case(word))
                    .map(Attribute::Position)
            })
    }
}

/// Static appearance of an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Appearance {
    pub color: usize,
    pub shape: Shape,
    pub size: SizeBand,
}

impl Appearance {
    /// Value of `slot`; the position slot needs the centre's x coordinate.
    pub fn value(&self, slot: AttributeSlot, x: f64, grid: usize) -> Attribute {
        match slot {
            AttributeSlot::Color => Attribute::Color(self.color),
            AttributeSlot::Shape => Attribute::Shape(self.shape),
            AttributeSlot::Size => Attribute::Size(self.size),
            AttributeSlot::Position => Attribute::Position(PositionBand::of(x, grid)),
        }
    }
}

/// A moving object of the synthetic video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: usize,
    pub appearance: Appearance,
    /// Centre per frame; defined on every frame, visible or not.
    pub trajectory: Vec<(f64, f64)>,
    /// Sorted, disjoint, non-adjacent visibility intervals.
    pub visibility: Vec<Interval>,
    /// Sorted, disjoint intervals during which the object makes a sound.
    pub sound: Vec<Interval>,
}

impl SimObject {
    pub fn visible(&self, t: usize) -> bool {
        self.visibility.iter().any(|i| i.contains(t))
    }

    pub fn sounding(&self, t: usize) -> bool {
        self.sound.iter().any(|i| i.contains(t))
    }

    /// Visibility interval containing `t`.
    pub fn segment_at(&self, t: usize) -> Option<Interval> {
        self.visibility.iter().copied().find(|i| i.contains(t))
    }

    pub fn has(&self, attr: Attribute, t: usize, grid: usize) -> bool {
        self.appearance.value(attr.slot(), self.trajectory[t].0, grid) == attr
    }

    /// Rasterized silhouette at frame `t`, ignoring visibility.
    pub fn render(&self, t: usize, grid: usize) -> BinaryMask {
        let (cx, cy) = self.trajectory[t];
        let h = self.appearance.size.half_extent();
        let shape = self.appearance.shape;
        BinaryMask::from_fn(grid, grid, |x, y| {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            match shape {
                Shape::Square => dx.abs() <= h && dy.abs() <= h,
                Shape::Circle => dx * dx + dy * dy <= h * h,
                // apex up, base at the bottom of the extent
                Shape::Triangle => dy.abs() <= h && dx.abs() <= (dy + h) / 2.0,
            }
        })
    }
}

/// Query templates. Temporal templates need the whole episode to resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Query {
    /// Among objects that leave the scene before the episode ends, the one
    /// whose final disappearance is latest.
    LastToDisappear,
    /// The object whose most recent sound starts latest.
    LastToSound,
    /// The only object with this attribute value.
    AttributeMatch { value: Attribute },
}

impl Query {
    pub fn is_temporal(&self) -> bool {
        !matches!(self, Query::AttributeMatch { .. })
    }

    /// Reference instruction as presented to System 1.
    pub fn text(&self, colors: &[String]) -> String {
        use alloc::format;
        match self {
            Query::LastToDisappear => "the last object to disappear".into(),
            Query::LastToSound => "the last object to make a sound".into(),
            Query::AttributeMatch { value } => format!("the {} object", value.word(colors)),
        }
    }
}

/// Ground truth of one object on one frame where it is visible.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFrame {
    pub mask: BinaryMask,
    pub bbox: BBox,
    /// Erosion order of `mask`, deepest cells first.
    pub erosion_order: Vec<u32>,
}

/// A generated video with its query and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub frames: usize,
    pub grid: usize,
    pub colors: Vec<String>,
    pub objects: Vec<SimObject>,
    /// Index into `objects` of the queried object.
    pub target: usize,
    pub query: Query,
    pub gt_masks: MaskSequence,
    pub gt_boxes: Vec<Option<BBox>>,
    pub observations: Vec<FrameObservation>,
    /// `renders[object][frame]`, `None` where the object is hidden.
    pub renders: Vec<Vec<Option<ObjectFrame>>>,
}

/// Inputs to [`Episode::assemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeParts {
    pub seed: u64,
    pub frames: usize,
    pub grid: usize,
    pub colors: Vec<String>,
    pub objects: Vec<SimObject>,
    pub target: usize,
    pub query: Query,
}

impl Episode {
    /// Render ground truth and draw the noisy observations for a fully
    /// specified scene.
    pub fn assemble(
        parts: EpisodeParts,
        presence_noise: f64,
        post_gap_frames: usize,
        rng: &mut impl Rng,
    ) -> Result<Episode> {
        let EpisodeParts {
            seed,
            frames,
            grid,
            colors,
            objects,
            target,
            query,
        } = parts;
        let renders: Vec<Vec<Option<ObjectFrame>>> = objects
            .iter()
            .map(|o| {
                (0..frames)
                    .map(|t| {
                        if !o.visible(t) {
                            return None;
                        }
                        let mask = o.render(t, grid);
                        let bbox = BBox::around(&mask)?;
                        let erosion_order = mask.erosion_order();
                        Some(ObjectFrame {
                            mask,
                            bbox,
                            erosion_order,
                        })
                    })
                    .collect()
            })
            .collect();

        let target_frames = &renders[target];
        let masks = target_frames
            .iter()
            .map(|f| {
                f.as_ref()
                    .map_or_else(|| BinaryMask::empty(grid, grid), |f| f.mask.clone())
            })
            .collect();
        let gt_masks = MaskSequence::new(masks)?;
        let gt_boxes: Vec<Option<BBox>> = target_frames.iter().map(|f| f.as_ref().map(|f| f.bbox)).collect();

        let max_area = gt_masks.masks().iter().map(BinaryMask::area).max().unwrap_or(0).max(1) as f64;
        let noise =
            Normal::new(0.0, presence_noise).map_err(|_| crate::Error::config("env.presence_noise", "invalid"))?;
        let tgt = &objects[target];
        let observations = (0..frames)
            .map(|t| {
                let base = if tgt.visible(t) {
                    0.45 + 0.4 * gt_masks.masks()[t].area() as f64 / max_area
                } else {
                    0.15
                };
                let post_gap = tgt
                    .visibility
                    .iter()
                    .any(|s| s.start > 0 && t >= s.start && t < s.start + post_gap_frames);
                let distractors = objects
                    .iter()
                    .enumerate()
                    .filter(|(i, o)| *i != target && o.visible(t))
                    .count();
                FrameObservation {
                    presence_score: (base + noise.sample(rng)).clamp(0.0, 1.0),
                    time_position: t as f64 / frames as f64,
                    sound_active: if tgt.sounding(t) { 1.0 } else { 0.0 },
                    post_gap: if post_gap { 1.0 } else { 0.0 },
                    crowding: distractors as f64 / (MAX_OBJECTS - 1) as f64,
                }
            })
            .collect();

        Ok(Episode {
            seed,
            frames,
            grid,
            colors,
            objects,
            target,
            query,
            gt_masks,
            gt_boxes,
            observations,
            renders,
        })
    }

    pub fn target_object(&self) -> &SimObject {
        &self.objects[self.target]
    }

    /// Visibility segments of the queried object.
    pub fn target_segments(&self) -> &[Interval] {
        &self.objects[self.target].visibility
    }

    /// Ground-truth target area per frame.
    pub fn gt_areas(&self) -> Vec<usize> {
        self.gt_masks.masks().iter().map(BinaryMask::area).collect()
    }

    /// Episode length in seconds at one frame per second.
    pub fn duration_secs(&self) -> u32 {
        self.frames as u32
    }

    pub fn render_at(&self, object: usize, t: usize) -> Option<&ObjectFrame> {
        self.renders.get(object)?.get(t)?.as_ref()
    }
}
