//! Rotation and camera-pose algebra.
//!
//! Rotations are unit quaternions stored as `(w, x, y, z)` and renormalised
//! after every operation. Camera poses are world-to-camera rigid transforms:
//! a world point `X` maps to camera coordinates `R·X + t`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Quaternions closer than this (in dot product) to each other fall back to
/// normalised linear interpolation in [`slerp`].
const SLERP_LINEAR_EPS: f64 = 1e-8;

/// Translation vectors shorter than this carry no direction.
const MIN_TRANSLATION_NORM: f64 = 1e-12;

/// Largest accepted deviation from unit norm when decoding a quaternion.
const WIRE_UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("translation vector has no direction (norm < 1e-12)")]
    ZeroTranslation,
    #[error("interpolation parameter {0} outside [0, 1]")]
    Domain(f64),
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("keyposes must include index {0}")]
    MissingEndpoint(usize),
    #[error("keypose index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("keypose index {index} lies beyond the last frame {last}")]
    IndexOutOfRange { index: usize, last: usize },
    #[error("trajectory needs at least two poses")]
    TooShort,
}

/// A 3D rotation backed by a unit quaternion.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub const fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Builds a rotation from raw quaternion components, normalising them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(GeometryError::DegenerateQuaternion);
        }
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    fn normalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::from_wxyz(w, x, y, z).unwrap_or_default()
    }

    /// Rotation of `angle` radians about `axis`. A zero axis yields identity.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self::normalized(c, s * a.x, s * a.y, s * a.z)
    }

    /// Rotation from a rotation vector (axis scaled by angle in radians).
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn about_x_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), deg.to_radians())
    }

    pub fn about_y_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), deg.to_radians())
    }

    pub fn about_z_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), deg.to_radians())
    }

    /// Converts a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Mat3) -> Self {
        let tr = m.trace();
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Self::normalized(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::normalized(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::normalized(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::normalized(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Self { w, x, y, z } = *self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn wxyz(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    /// Vector part `(x, y, z)`.
    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn inverse(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// The same rotation with the opposite quaternion sign.
    pub fn negated(&self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2w(u×v) + 2u×(u×v)
        let u = self.vector();
        let uv = u.cross(v);
        v + 2.0 * self.w * uv + 2.0 * u.cross(&uv)
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.vector().norm().atan2(self.w.abs())
    }

    /// Rotation vector (log map) with angle in `[0, π]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = if self.w < 0.0 { self.negated() } else { *self };
        let v = q.vector();
        let s = v.norm();
        if s < 1e-300 {
            return Vec3::zeros();
        }
        v * (2.0 * s.atan2(q.w) / s)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    /// Hamilton product: `(a * b).rotate(v) == a.rotate(&b.rotate(v))`.
    fn mul(self, b: Rotation) -> Rotation {
        let a = self;
        Rotation::normalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wxyz().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > WIRE_UNIT_TOLERANCE {
            return Err(D::Error::custom(format!("quaternion norm {n} is not unit")));
        }
        Rotation::from_wxyz(w, x, y, z).map_err(D::Error::custom)
    }
}

/// Geodesic angle between two rotations in degrees, in `[0, 180]`.
///
/// Equal to `2·acos(|⟨a,b⟩|)`, evaluated through `atan2` on the relative
/// quaternion so that small and near-180° angles keep full precision.
pub fn rotation_geodesic_deg(a: &Rotation, b: &Rotation) -> f64 {
    (a.inverse() * *b).angle().to_degrees()
}

/// Angle between the directions of two translation vectors in degrees.
pub fn translation_angular_deg(a: &Vec3, b: &Vec3) -> Result<f64, GeometryError> {
    if a.norm() < MIN_TRANSLATION_NORM || b.norm() < MIN_TRANSLATION_NORM {
        return Err(GeometryError::ZeroTranslation);
    }
    Ok(a.cross(b).norm().atan2(a.dot(b)).to_degrees())
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(a: &Rotation, b: &Rotation, u: f64) -> Result<Rotation, GeometryError> {
    if !(0.0..=1.0).contains(&u) {
        return Err(GeometryError::Domain(u));
    }
    if u == 0.0 {
        return Ok(*a);
    }
    if u == 1.0 {
        return Ok(*b);
    }
    let mut d = a.dot(b);
    let target = if d < 0.0 {
        d = -d;
        b.negated()
    } else {
        *b
    };
    let (s0, s1) = if d > 1.0 - SLERP_LINEAR_EPS {
        (1.0 - u, u)
    } else {
        let theta = d.min(1.0).acos();
        let sin_theta = theta.sin();
        (((1.0 - u) * theta).sin() / sin_theta, (u * theta).sin() / sin_theta)
    };
    Ok(Rotation::normalized(
        s0 * a.w + s1 * target.w,
        s0 * a.x + s1 * target.x,
        s0 * a.y + s1 * target.y,
        s0 * a.z + s1 * target.z,
    ))
}

/// Absolute yaw of the relative rotation `b·a⁻¹`, Z-Y-X convention, degrees.
pub fn relative_yaw_deg(a: &Rotation, b: &Rotation) -> f64 {
    let m = (*b * a.inverse()).to_matrix();
    m[(1, 0)].atan2(m[(0, 0)]).to_degrees().abs()
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Rotation,
    #[serde(with = "vec3_array")]
    pub translation: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    /// Camera placed at `center` (world coordinates) with world-to-camera `rotation`.
    pub fn from_center(rotation: Rotation, center: &Vec3) -> Self {
        Self { rotation, translation: -rotation.rotate(center) }
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -self.rotation.inverse().rotate(&self.translation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> CameraPose {
        let r = self.rotation.inverse();
        CameraPose { rotation: r, translation: -r.rotate(&self.translation) }
    }
}

/// The pose taking camera-`a` coordinates to camera-`b` coordinates, `b ∘ a⁻¹`.
pub fn relative_pose(a: &CameraPose, b: &CameraPose) -> CameraPose {
    b.compose(&a.inverse())
}

/// A dense pose sequence indexed `0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<CameraPose>,
}

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>) -> Result<Self, GeometryError> {
        if poses.len() < 2 {
            return Err(GeometryError::TooShort);
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Index of the last pose, `T`.
    pub fn last_index(&self) -> usize {
        self.poses.len() - 1
    }

    pub fn into_poses(self) -> Vec<CameraPose> {
        self.poses
    }
}

/// Densifies sparse keyposes into poses `0..=last`: slerp on rotations,
/// linear interpolation on translations between bracketing keyposes.
pub fn interpolate_trajectory(
    keyposes: &[(usize, CameraPose)],
    last: usize,
) -> Result<Trajectory, GeometryError> {
    if last < 1 {
        return Err(GeometryError::TooShort);
    }
    let mut keys: Vec<(usize, CameraPose)> = keyposes.to_vec();
    keys.sort_by_key(|(t, _)| *t);
    for pair in keys.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(GeometryError::DuplicateIndex(pair[0].0));
        }
    }
    if keys.first().map(|k| k.0) != Some(0) {
        return Err(GeometryError::MissingEndpoint(0));
    }
    match keys.last() {
        Some(&(t, _)) if t > last => return Err(GeometryError::IndexOutOfRange { index: t, last }),
        Some(&(t, _)) if t == last => {}
        _ => return Err(GeometryError::MissingEndpoint(last)),
    }

    let mut poses = Vec::with_capacity(last + 1);
    for seg in keys.windows(2) {
        let (t1, p1) = seg[0];
        let (t2, p2) = seg[1];
        poses.push(p1);
        let span = (t2 - t1) as f64;
        for t in t1 + 1..t2 {
            let u = (t - t1) as f64 / span;
            let rotation = slerp(&p1.rotation, &p2.rotation, u)?;
            let translation = p1.translation * (1.0 - u) + p2.translation * u;
            poses.push(CameraPose { rotation, translation });
        }
    }
    poses.push(keys[keys.len() - 1].1);
    Trajectory::new(poses)
}

pub(crate) mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(x, y, z))
    }
}
