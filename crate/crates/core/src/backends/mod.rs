//! The three model roles behind the pipeline, their wire format, response
//! validation, an HTTP client and a synthetic backend with ground truth.

pub mod http;
pub mod suite;
pub mod synthetic;
pub mod validate;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use suite::{PairSuiteConfig, SyntheticSuite};
pub use synthetic::{SceneConfig, SyntheticBackend, SyntheticError, SyntheticScene};
pub use wire::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Interpolate,
    Nvs,
    Pose,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Interpolate, Role::Nvs, Role::Pose];

    pub fn name(&self) -> &'static str {
        match self {
            Role::Interpolate => "interpolate",
            Role::Nvs => "nvs",
            Role::Pose => "pose",
        }
    }

    /// Request path, relative to the endpoint base URL.
    pub fn path(&self) -> String {
        format!("/v1/{}", self.name())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{role}: transport failed after {attempts} attempts: {message}")]
    Transport { role: Role, attempts: usize, message: String },
    #[error("{role}: request timed out")]
    Timeout { role: Role },
    #[error("{role}: HTTP status {status}: {body}")]
    Status { role: Role, status: u16, body: String },
    #[error("{role}: protocol violation: {detail}")]
    ProtocolViolation { role: Role, detail: String },
    #[error("{role}: no endpoint configured")]
    NotConfigured { role: Role },
    #[error("image codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
}

/// Dense frame interpolation between two images.
pub trait Interpolator: Send + Sync {
    fn interpolate(&self, req: &InterpolateRequest) -> Result<InterpolateResponse, BackendError>;
}

/// Pose-conditioned novel-view synthesis along a trajectory.
pub trait ViewSynthesizer: Send + Sync {
    fn synthesize(&self, req: &NvsRequest) -> Result<NvsResponse, BackendError>;
}

/// Globally aligned per-frame poses with frame 0 as the gauge.
pub trait PoseEstimator: Send + Sync {
    fn estimate(&self, req: &PoseRequest) -> Result<PoseResponse, BackendError>;
}

/// One implementation per role; they may be the same object.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub interpolator: &'a dyn Interpolator,
    pub synthesizer: &'a dyn ViewSynthesizer,
    pub pose: &'a dyn PoseEstimator,
}

impl<'a> Backends<'a> {
    pub fn uniform<B: Interpolator + ViewSynthesizer + PoseEstimator>(b: &'a B) -> Self {
        Self { interpolator: b, synthesizer: b, pose: b }
    }
}
