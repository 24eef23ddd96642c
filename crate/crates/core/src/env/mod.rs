//! Synthetic episodes and the mock System 2 that consumes keyframe actions.

mod config;
mod episode;
mod generate;
mod pipeline;
mod query;
mod system2;

pub use config::{EnvConfig, QueryMix, MAX_OBJECTS};
pub use episode::{
    Appearance, Attribute, Episode, EpisodeParts, Interval, ObjectFrame, PositionBand, Query, Shape, SimObject,
    SizeBand,
};
pub use generate::{generate_episode, EpisodeSpec};
pub use pipeline::{
    noiseless_reward, oracle_action, perfect_anchors, response_for_action, rollout_from_response, rollout_pipeline,
    rollout_with_phrases, segment_anchor_frames, RolloutOutcome,
};
pub use query::{resolve_target, single_frame_solvable};
pub use system2::{mock_ground, propagate, DetectionTuple, Phrase, Propagation, Track};
