//! Two-stage keyframe selection for referring video object segmentation,
//! simulated at desk scale.
//!
//! A *System 1* policy looks at cheap per-frame observations of a synthetic
//! episode and picks a handful of keyframes plus one grounding instruction per
//! keyframe. A mock *System 2* grounds each instruction to boxes on its
//! keyframe and propagates masks through the video. The reward stack scores
//! the result and a critic-free group-relative policy optimizer trains the
//! policy on it.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, configuration
//! loading and the command line live in the companion `keysel` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod env;
pub mod error;
pub mod geometry;
pub mod grpo;
pub mod matching;
pub mod metrics;
pub mod policy;
pub mod protocol;
pub mod rewards;
pub mod seed;

mod math;

pub use error::{Error, Result};
