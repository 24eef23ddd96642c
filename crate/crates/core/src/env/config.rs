use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative weights of the query templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryMix {
    pub last_to_disappear: f64,
    pub last_to_sound: f64,
    pub attribute_match: f64,
}

impl Default for QueryMix {
    fn default() -> Self {
        QueryMix {
            last_to_disappear: 1.0,
            last_to_sound: 1.0,
            attribute_match: 1.0,
        }
    }
}

/// Episode generator and mock System 2 settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Frame count is drawn uniformly from `frames_min..=frames_max`.
    pub frames_min: usize,
    pub frames_max: usize,
    /// Side of the square pixel grid.
    pub grid: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Chance that a distractor is hidden for part of the episode.
    pub occlusion_prob: f64,
    /// Number of separate visibility segments of the queried object.
    pub target_segments_min: usize,
    pub target_segments_max: usize,
    pub query_mix: QueryMix,
    /// Color vocabulary; shapes, size bands and position bands are fixed.
    pub colors: Vec<String>,
    /// Standard deviation of the noise on `presence_score`.
    pub presence_noise: f64,
    /// How many frames after a reappearance carry the `post_gap` flag.
    pub post_gap_frames: usize,
    /// Per-frame IoU decay of a propagated mask away from its anchor.
    pub gamma: f64,
    /// Box jitter of an ambiguous grounding, as a fraction of box size.
    pub jitter_scale: f64,
    /// Generation attempts before giving up on a seed.
    pub max_retries: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            frames_min: 8,
            frames_max: 24,
            grid: 64,
            objects_min: 2,
            objects_max: 5,
            occlusion_prob: 0.3,
            target_segments_min: 2,
            target_segments_max: 3,
            query_mix: QueryMix::default(),
            colors: vec!["red".to_string(), "green".to_string(), "blue".to_string()],
            presence_noise: 0.1,
            post_gap_frames: 2,
            gamma: 0.97,
            jitter_scale: 0.5,
            max_retries: 64,
        }
    }
}

/// Largest number of objects an episode may hold.
pub const MAX_OBJECTS: usize = 6;

impl EnvConfig {
    /// Inference-time protocol: a fixed 24-frame resampling.
    pub fn for_inference(&self) -> EnvConfig {
        EnvConfig {
            frames_min: 24,
            frames_max: 24,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_min < 8 || self.frames_max > 64 || self.frames_min > self.frames_max {
            return Err(Error::config(
                "env.frames_min/frames_max",
                "need 8 <= frames_min <= frames_max <= 64",
            ));
        }
        if !(16..=256).contains(&self.grid) {
            return Err(Error::config("env.grid", "must lie in 16..=256"));
        }
        if self.objects_min < 1 || self.objects_max > MAX_OBJECTS || self.objects_min > self.objects_max {
            return Err(Error::config(
                "env.objects_min/objects_max",
                "need 1 <= objects_min <= objects_max <= 6",
            ));
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return Err(Error::config("env.occlusion_prob", "must lie in [0, 1]"));
        }
        if self.target_segments_min < 1
            || self.target_segments_max > 4
            || self.target_segments_min > self.target_segments_max
        {
            return Err(Error::config(
                "env.target_segments_min/target_segments_max",
                "need 1 <= min <= max <= 4",
            ));
        }
        let m = &self.query_mix;
        let weights = [m.last_to_disappear, m.last_to_sound, m.attribute_match];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config(
                "env.query_mix",
                "weights must be non-negative with a positive sum",
            ));
        }
        if self.objects_min == 1 && m.attribute_match <= 0.0 {
            return Err(Error::config(
                "env.query_mix.attribute_match",
                "single-object episodes only support attribute queries",
            ));
        }
        if self.colors.len() < 2
            || self
                .colors
                .iter()
                .any(|c| c.is_empty() || c.contains(char::is_whitespace))
        {
            return Err(Error::config("env.colors", "need at least two single-word color names"));
        }
        let mut sorted = self.colors.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.colors.len() {
            return Err(Error::config("env.colors", "color names must be distinct"));
        }
        if !(self.presence_noise.is_finite() && self.presence_noise >= 0.0) {
            return Err(Error::config("env.presence_noise", "must be finite and >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("env.gamma", "must lie in (0, 1]"));
        }
        if !(self.jitter_scale.is_finite() && self.jitter_scale >= 0.0) {
            return Err(Error::config("env.jitter_scale", "must be finite and >= 0"));
        }
        if self.max_retries == 0 {
            return Err(Error::config("env.max_retries", "must be at least 1"));
        }
        Ok(())
    }
}
