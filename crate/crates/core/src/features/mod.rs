//! Frames, ORB-style feature extraction and binary descriptor matching.

mod frame;
mod matching;
mod orb;
mod pattern;
mod preprocess;

use thiserror::Error;

pub use frame::{bt601_luma, Frame, Provenance, MIN_FRAME_SIDE};
pub use matching::{match_features, MatchPair, MatchResult, Matcher, OrbMatcher, DEFAULT_MAX_DISTANCE};
pub use orb::{detect_and_describe, Descriptor, FeatureSet, Keypoint, OrbConfig};
pub use preprocess::{crop_plan, preprocess, CropPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("no corners found; frame is untextured")]
    EmptyFrame,
    #[error("frame {width}x{height} is smaller than 32x32")]
    TooSmall { width: u32, height: u32 },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("cannot decode image: {0}")]
    Decode(String),
}

#[cfg(test)]
pub(crate) fn orb_test_frame(seed: u64) -> Frame {
    orb::tests::blocks(512, 320, seed, (0, 0))
}
