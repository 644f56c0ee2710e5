//! Robust two-view geometry: RANSAC over the normalised 8-point fundamental
//! matrix solver, and relative pose recovery from the essential matrix.
//!
//! Correspondences follow the convention `qᵀ·F·p = 0`, with `p` in the first
//! image and `q` in the second.

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3, Vector4};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraPose, Mat3, Rotation, Vec3};

const MIN_SAMPLE: usize = 8;
/// Cap on sample draws, as a multiple of the configured iteration count.
const MAX_DRAW_FACTOR: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustError {
    #[error("need at least 8 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("every sample was degenerate")]
    DegenerateGeometry,
    #[error("no pose candidate puts more than half of the inliers in front of both cameras")]
    CheiralityAmbiguous,
    #[error("{got} inliers is below the floor of {min}")]
    InsufficientInliers { got: usize, min: usize },
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub p: [f64; 2],
    pub q: [f64; 2],
}

impl Correspondence {
    pub fn new(p: [f64; 2], q: [f64; 2]) -> Self {
        Self { p, q }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier cutoff on the Sampson distance, pixels.
    pub threshold: f64,
    pub seed: u64,
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 2000, threshold: 1.5, seed: 0, min_inliers: 15 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), RobustError> {
        if self.iterations < 1 {
            return Err(RobustError::InvalidConfig("iterations must be >= 1"));
        }
        if !(self.threshold > 0.0) {
            return Err(RobustError::InvalidConfig("threshold must be > 0"));
        }
        Ok(())
    }
}

/// Rank-2 fundamental matrix with unit Frobenius norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpipolarModel {
    pub f: Mat3,
}

impl EpipolarModel {
    /// First-order geometric distance of a correspondence to the model, pixels.
    pub fn sampson_distance(&self, c: &Correspondence) -> f64 {
        sampson(&self.f, c)
    }
}

#[inline]
fn sampson(f: &Mat3, c: &Correspondence) -> f64 {
    let (px, py, qx, qy) = (c.p[0], c.p[1], c.q[0], c.q[1]);
    let fp0 = f[(0, 0)] * px + f[(0, 1)] * py + f[(0, 2)];
    let fp1 = f[(1, 0)] * px + f[(1, 1)] * py + f[(1, 2)];
    let fp2 = f[(2, 0)] * px + f[(2, 1)] * py + f[(2, 2)];
    let ftq0 = f[(0, 0)] * qx + f[(1, 0)] * qy + f[(2, 0)];
    let ftq1 = f[(0, 1)] * qx + f[(1, 1)] * qy + f[(2, 1)];
    let e = qx * fp0 + qy * fp1 + fp2;
    let den = fp0 * fp0 + fp1 * fp1 + ftq0 * ftq0 + ftq1 * ftq1;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (e * e / den).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutcome {
    pub model: EpipolarModel,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
}

/// Similarity taking points to zero centroid and mean distance √2.
fn hartley(points: impl Iterator<Item = [f64; 2]> + Clone) -> Option<Mat3> {
    let n = points.clone().count() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for p in points.clone() {
        cx += p[0];
        cy += p[1];
    }
    cx /= n;
    cy /= n;
    let mean: f64 = points.map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Mat3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Mat3, p: [f64; 2]) -> [f64; 2] {
    [t[(0, 0)] * p[0] + t[(0, 2)], t[(1, 1)] * p[1] + t[(1, 2)]]
}

/// Normalised 8-point fit over the given correspondences.
fn fit_fundamental(corrs: &[&Correspondence]) -> Option<Mat3> {
    let tp = hartley(corrs.iter().map(|c| c.p))?;
    let tq = hartley(corrs.iter().map(|c| c.q))?;
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for c in corrs {
        let [px, py] = apply(&tp, c.p);
        let [qx, qy] = apply(&tq, c.q);
        let row = SMatrix::<f64, 1, 9>::from_row_slice(&[qx * px, qx * py, qx, qy * px, qy * py, qy, px, py, 1.0]);
        ata += row.transpose() * row;
    }
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // A multi-dimensional null space (e.g. p = q everywhere) still yields an
    // exact fit from any of its vectors; only numerical failure is rejected.
    if !eig.eigenvalues.iter().all(|l| l.is_finite()) {
        return None;
    }
    let v = eig.eigenvectors.column(order[0]);
    let fhat = Mat3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let svd = fhat.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut s = svd.singular_values;
    let imin = s.imin();
    s[imin] = 0.0;
    let f2 = u * Matrix3::from_diagonal(&s) * vt;
    let f = tq.transpose() * f2 * tp;
    let n = f.norm();
    if !n.is_finite() || n == 0.0 {
        return None;
    }
    Some(f / n)
}

fn score(f: &Mat3, corrs: &[Correspondence], threshold: f64) -> usize {
    corrs.iter().filter(|c| sampson(f, c) < threshold).count()
}

/// Fixed-iteration RANSAC for the fundamental matrix.
///
/// The winner is the first hypothesis reaching the highest inlier count. It is
/// then refit on its inliers; the refit replaces it only when it keeps at
/// least as many inliers.
pub fn ransac_fundamental(corrs: &[Correspondence], cfg: &RansacConfig) -> Result<RansacOutcome, RobustError> {
    cfg.validate()?;
    if corrs.len() < MIN_SAMPLE {
        return Err(RobustError::TooFewCorrespondences(corrs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Mat3, usize)> = None;
    let mut hypotheses = 0;
    let mut draws = 0;
    while hypotheses < cfg.iterations && draws < cfg.iterations * MAX_DRAW_FACTOR {
        draws += 1;
        let sample: Vec<&Correspondence> =
            index::sample(&mut rng, corrs.len(), MIN_SAMPLE).iter().map(|i| &corrs[i]).collect();
        let Some(f) = fit_fundamental(&sample) else { continue };
        hypotheses += 1;
        let n = score(&f, corrs, cfg.threshold);
        if best.as_ref().is_none_or(|(_, b)| n > *b) {
            best = Some((f, n));
        }
    }
    let (mut f, mut count) = best.ok_or(RobustError::DegenerateGeometry)?;
    if count >= MIN_SAMPLE {
        let inliers: Vec<&Correspondence> = corrs.iter().filter(|c| sampson(&f, c) < cfg.threshold).collect();
        if let Some(refit) = fit_fundamental(&inliers) {
            let n = score(&refit, corrs, cfg.threshold);
            if n >= count {
                f = refit;
                count = n;
            }
        }
    }
    let inlier_mask: Vec<bool> = corrs.iter().map(|c| sampson(&f, c) < cfg.threshold).collect();
    debug_assert_eq!(inlier_mask.iter().filter(|m| **m).count(), count);
    Ok(RansacOutcome { model: EpipolarModel { f }, inlier_mask, inlier_count: count })
}

/// Linear triangulation in normalised coordinates; returns depths in both cameras.
fn triangulate_depths(x0: &Vec3, x1: &Vec3, r: &Mat3, t: &Vec3) -> Option<(f64, f64)> {
    let p0 = nalgebra::Matrix3x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let mut p1 = nalgebra::Matrix3x4::zeros();
    p1.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    p1.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    let mut a = Matrix4::zeros();
    a.set_row(0, &(x0.x * p0.row(2) - p0.row(0)));
    a.set_row(1, &(x0.y * p0.row(2) - p0.row(1)));
    a.set_row(2, &(x1.x * p1.row(2) - p1.row(0)));
    a.set_row(3, &(x1.y * p1.row(2) - p1.row(1)));
    let eig = (a.transpose() * a).symmetric_eigen();
    let h: Vector4<f64> = eig.eigenvectors.column(eig.eigenvalues.imin()).into();
    if h.w.abs() < 1e-12 {
        return None;
    }
    let xw = h.xyz() / h.w;
    Some((xw.z, (r * xw + t).z))
}

/// Relative pose of the second camera with respect to the first, from pixel
/// correspondences and shared intrinsics. Translation is unit length.
pub fn estimate_relative_pose(
    corrs: &[Correspondence],
    k: &Mat3,
    cfg: &RansacConfig,
) -> Result<CameraPose, RobustError> {
    let fit = ransac_fundamental(corrs, cfg)?;
    if fit.inlier_count < cfg.min_inliers.max(MIN_SAMPLE) {
        return Err(RobustError::InsufficientInliers { got: fit.inlier_count, min: cfg.min_inliers });
    }
    let k_inv = k.try_inverse().ok_or(RobustError::InvalidConfig("intrinsics are singular"))?;
    let e = k.transpose() * fit.model.f * k;
    let svd = e.svd(true, true);
    let (mut u, mut vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let imin = svd.singular_values.imin();
    let t: Vector3<f64> = u.column(imin).into();
    // The null direction of E must be the third column for the W construction.
    if imin != 2 {
        return Err(RobustError::DegenerateGeometry);
    }
    let candidates = [
        (u * w * vt, t),
        (u * w * vt, -t),
        (u * w.transpose() * vt, t),
        (u * w.transpose() * vt, -t),
    ];
    let pts: Vec<(Vec3, Vec3)> = corrs
        .iter()
        .zip(&fit.inlier_mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| (k_inv * Vec3::new(c.p[0], c.p[1], 1.0), k_inv * Vec3::new(c.q[0], c.q[1], 1.0)))
        .collect();
    let mut best = (0usize, 0usize);
    for (ci, (r, t)) in candidates.iter().enumerate() {
        let good = pts
            .iter()
            .filter(|(x0, x1)| matches!(triangulate_depths(x0, x1, r, t), Some((d0, d1)) if d0 > 0.0 && d1 > 0.0))
            .count();
        if good > best.1 {
            best = (ci, good);
        }
    }
    if 2 * best.1 <= pts.len() {
        return Err(RobustError::CheiralityAmbiguous);
    }
    let (r, t) = candidates[best.0];
    Ok(CameraPose::new(Rotation::from_matrix(&r), t.normalize()))
}
