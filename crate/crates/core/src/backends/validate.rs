//! Response invariants, checked for every backend before results are used.

use serde::de::DeserializeOwned;

use super::wire::*;
use super::{BackendError, Role};
use crate::features::{Frame, Provenance};
use crate::geometry::rotation_geodesic_deg;
use crate::geometry::Rotation;

/// Tolerance for the first pose being the identity.
const IDENTITY_ROT_TOL_DEG: f64 = 1e-6;
const IDENTITY_TRANS_TOL: f64 = 1e-9;

fn violation(role: Role, detail: impl Into<String>) -> BackendError {
    BackendError::ProtocolViolation { role, detail: detail.into() }
}

/// Parses a response body; malformed JSON or bad values are protocol violations.
pub fn parse_response<T: DeserializeOwned>(role: Role, body: &[u8]) -> Result<T, BackendError> {
    serde_json::from_slice(body).map_err(|e| violation(role, format!("malformed response: {e}")))
}

fn decode_all(role: Role, images: &[String], provenance: Provenance) -> Result<Vec<Frame>, BackendError> {
    images
        .iter()
        .enumerate()
        .map(|(i, s)| decode_image(s, i, provenance).map_err(|e| violation(role, format!("frame {i}: {e}"))))
        .collect()
}

fn same_pixels(a: &Frame, b: &Frame) -> bool {
    a.width() == b.width() && a.height() == b.height() && a.gray() == b.gray() && a.rgb() == b.rgb()
}

/// Frame count matches and the endpoints reproduce the inputs pixel for pixel.
pub fn check_interpolate(req: &InterpolateRequest, resp: &InterpolateResponse) -> Result<Vec<Frame>, BackendError> {
    let role = Role::Interpolate;
    if resp.frames.len() != req.frame_count {
        return Err(violation(role, format!("expected {} frames, got {}", req.frame_count, resp.frames.len())));
    }
    let frames = decode_all(role, &resp.frames, Provenance::DcInterpolated)?;
    let start = decode_image(&req.start, 0, Provenance::Input)?;
    let end = decode_image(&req.end, 0, Provenance::Input)?;
    if !same_pixels(&frames[0], &start) {
        return Err(violation(role, "first frame does not echo the start image"));
    }
    if !same_pixels(&frames[frames.len() - 1], &end) {
        return Err(violation(role, "last frame does not echo the end image"));
    }
    Ok(frames)
}

/// One decodable frame per trajectory pose.
pub fn check_nvs(req: &NvsRequest, resp: &NvsResponse) -> Result<Vec<Frame>, BackendError> {
    let role = Role::Nvs;
    if resp.frames.len() != req.trajectory.len() {
        return Err(violation(
            role,
            format!("expected {} frames, got {}", req.trajectory.len(), resp.frames.len()),
        ));
    }
    decode_all(role, &resp.frames, Provenance::VcRefined)
}

/// Counts align, the gauge is pinned to the first frame, confidences are in
/// `[0, 1]`. Unit quaternions are enforced while parsing.
pub fn check_pose(req: &PoseRequest, resp: &PoseResponse) -> Result<(), BackendError> {
    let role = Role::Pose;
    let n = req.frames.len();
    if resp.poses.len() != n {
        return Err(violation(role, format!("expected {n} poses, got {}", resp.poses.len())));
    }
    if resp.confidences.len() != n {
        return Err(violation(role, format!("expected {n} confidences, got {}", resp.confidences.len())));
    }
    if let Some(p0) = resp.poses.first() {
        if rotation_geodesic_deg(&p0.rotation, &Rotation::identity()) > IDENTITY_ROT_TOL_DEG
            || p0.translation.norm() > IDENTITY_TRANS_TOL
        {
            return Err(violation(role, "first pose is not the identity"));
        }
    }
    if let Some((i, c)) = resp.confidences.iter().enumerate().find(|(_, c)| !(0.0..=1.0).contains(*c)) {
        return Err(violation(role, format!("confidence {c} of frame {i} outside [0, 1]")));
    }
    if let Some(i) = resp.poses.iter().position(|p| !p.translation.iter().all(|v| v.is_finite())) {
        return Err(violation(role, format!("pose {i} has a non-finite translation")));
    }
    Ok(())
}
