//! JSON message types exchanged with model backends.
//!
//! Field order in every struct is the serialisation order. Images travel as
//! standard-alphabet, padded base64 of PNG bytes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::features::{Frame, Provenance};
use crate::geometry::CameraPose;

use super::BackendError;

/// Default number of frames requested from the interpolator.
pub const DEFAULT_INTERPOLATE_FRAMES: usize = 16;
/// Default length of the refined-view trajectory.
pub const DEFAULT_TRAJECTORY_LEN: usize = 25;

pub fn encode_image(frame: &Frame) -> String {
    STANDARD.encode(frame.to_png())
}

pub fn decode_image(data: &str, index: usize, provenance: Provenance) -> Result<Frame, BackendError> {
    let bytes = STANDARD.decode(data).map_err(|e| BackendError::Codec(format!("base64: {e}")))?;
    Frame::decode(&bytes, index, provenance).map_err(|e| BackendError::Codec(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub start: String,
    pub end: String,
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub frames: Vec<String>,
}

/// A conditioning frame for view synthesis with its estimated pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelayFrame {
    /// Position of this relay on the trajectory.
    pub index: usize,
    pub image: String,
    pub pose: CameraPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvsRequest {
    pub relays: Vec<RelayFrame>,
    pub trajectory: Vec<CameraPose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NvsResponse {
    pub frames: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRequest {
    pub frames: Vec<String>,
}

/// World-to-camera poses in the gauge of the first frame, with a mean
/// confidence per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseResponse {
    pub poses: Vec<CameraPose>,
    pub confidences: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub roles: Vec<String>,
}

/// Body returned with non-2xx statuses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rotation, Vec3};

    #[test]
    fn field_order_is_declaration_order() {
        let req = InterpolateRequest { start: "QQ==".into(), end: "Qg==".into(), frame_count: 16, prompt: None };
        assert_eq!(serde_json::to_string(&req).unwrap(), r#"{"start":"QQ==","end":"Qg==","frame_count":16}"#);
        let resp = PoseResponse {
            poses: vec![CameraPose::new(Rotation::identity(), Vec3::new(0.0, 0.5, -1.0))],
            confidences: vec![1.0],
        };
        assert_eq!(
            serde_json::to_string(&resp).unwrap(),
            r#"{"poses":[{"rotation":[1.0,0.0,0.0,0.0],"translation":[0.0,0.5,-1.0]}],"confidences":[1.0]}"#
        );
    }

    #[test]
    fn image_roundtrip_uses_padded_standard_base64() {
        let gray: Vec<u8> = (0..33 * 32).map(|i| (i % 200) as u8).collect();
        let f = Frame::from_gray(33, 32, gray, 0, Provenance::Input).unwrap();
        let enc = encode_image(&f);
        assert!(enc.len() % 4 == 0);
        assert!(enc.chars().all(|c| c.is_ascii_alphanumeric() || "+/=".contains(c)));
        assert_eq!(decode_image(&enc, 0, Provenance::Input).unwrap(), f);
        assert!(matches!(decode_image("not base64!", 0, Provenance::Input), Err(BackendError::Codec(_))));
    }
}
