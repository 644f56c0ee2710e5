//! A projective toy world that answers all three backend roles with known
//! ground truth.
//!
//! The scene is a bumpy sphere of textured points viewed by pinhole cameras.
//! Every frame the backend renders (or is told about through a catalog) is
//! stored in a registry keyed by a digest of its pixels, together with the
//! camera that produced it and its per-point camera-frame geometry. The roles
//! then behave like their learned counterparts, but exactly:
//!
//! - interpolate renders along the slerp/lerp path between the two inputs;
//! - nvs places each relay's observed points in the world using the relay's
//!   *estimated* pose and renders the fused cloud, so wrong relay poses show
//!   up as ghosting, and exact ones reproduce a direct render;
//! - pose aligns per-frame point maps pairwise and averages the resulting
//!   view graph, optionally perturbing each edge with overlap-dependent
//!   rotation noise.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::validate::{check_interpolate, check_nvs, check_pose};
use super::wire::*;
use super::{BackendError, Interpolator, PoseEstimator, ViewSynthesizer};
use crate::features::{Frame, Provenance};
use crate::geometry::{interpolate_trajectory, rotation_geodesic_deg, CameraPose, Mat3, Rotation, Vec3};

/// Minimum number of scene points a render must show.
pub const MIN_VISIBLE: usize = 50;
const PATCH: i32 = 9;
const CELL: i32 = 3;
const BACKGROUND: u8 = 128;
const LEVELS: [u8; 3] = [30, 128, 225];
const NEAR: f64 = 0.05;
/// Edges need this many shared points for a rigid alignment.
const MIN_SHARED: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("only {visible} scene points visible, need {MIN_VISIBLE}")]
    InsufficientVisibility { visible: usize },
    #[error("frame {0} was not produced by this backend")]
    UnknownFrame(String),
    #[error("frames come from different scenes")]
    SceneMismatch,
    #[error("frame {0} shares too few points with the rest of the set")]
    Disconnected(usize),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub points: usize,
    pub radius: f64,
    /// Relative radial displacement of points.
    pub bump: f64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Gaussian pixel noise, intensity levels.
    pub noise_sigma: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 600,
            radius: 1.2,
            bump: 0.1,
            width: 512,
            height: 320,
            focal: 400.0,
            noise_sigma: 0.0,
        }
    }
}

impl SceneConfig {
    /// A 64×40 variant for compact fixtures.
    pub fn small(seed: u64) -> Self {
        Self { seed, width: 64, height: 40, focal: 50.0, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePoint {
    pub id: u32,
    pub position: Vec3,
    pub normal: Vec3,
    pub patch: [u8; (PATCH * PATCH) as usize],
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub points: Vec<ScenePoint>,
}

/// Camera on a sphere around the origin, looking at it, with world Z up.
pub fn orbit_pose(azimuth_deg: f64, elevation_deg: f64, distance: f64) -> CameraPose {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let center = distance * Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let forward = -center.normalize();
    let right = forward.cross(&Vec3::z()).normalize();
    let down = forward.cross(&right);
    let c2w = Mat3::from_columns(&[right, down, forward]);
    CameraPose::from_center(Rotation::from_matrix(&c2w.transpose()), &center)
}

/// Ring of orbit cameras at a fixed elevation, `step_deg` apart in azimuth.
pub fn ring_catalog(elevation_deg: f64, step_deg: f64, distance: f64) -> Vec<CameraPose> {
    let n = (360.0 / step_deg).round() as usize;
    (0..n).map(|i| orbit_pose(i as f64 * step_deg, elevation_deg, distance)).collect()
}

fn random_patch(rng: &mut ChaCha8Rng) -> [u8; (PATCH * PATCH) as usize] {
    let cells = PATCH / CELL;
    loop {
        let code: Vec<u8> = (0..cells * cells).map(|_| LEVELS[rng.random_range(0..3)]).collect();
        if code.contains(&LEVELS[0]) && code.contains(&LEVELS[2]) {
            let mut patch = [0u8; (PATCH * PATCH) as usize];
            for y in 0..PATCH {
                for x in 0..PATCH {
                    patch[(y * PATCH + x) as usize] = code[((y / CELL) * cells + x / CELL) as usize];
                }
            }
            return patch;
        }
    }
}

/// A point to draw: identity, world position and outward normal.
#[derive(Clone, Copy, Debug)]
struct Splat {
    id: u32,
    world: Vec3,
    normal: Vec3,
}

/// Camera-frame coordinates per point id, sorted by id.
type PointMap = Vec<(u32, Vec3)>;

impl SyntheticScene {
    pub fn new(config: SceneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.points.max(1);
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let points = (0..n)
            .map(|i| {
                // Fibonacci sphere with jitter for an even, irregular layout
                let z = 1.0 - 2.0 * (i as f64 + rng.random_range(0.2..0.8)) / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * i as f64 + rng.random_range(-0.2..0.2);
                let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z).normalize();
                let radius = config.radius * (1.0 + config.bump * rng.random_range(-1.0..1.0));
                ScenePoint { id: i as u32, position: dir * radius, normal: dir, patch: random_patch(&mut rng) }
            })
            .collect();
        Self { config, points }
    }

    pub fn intrinsics(&self) -> Mat3 {
        let c = &self.config;
        Mat3::new(c.focal, 0.0, c.width as f64 / 2.0, 0.0, c.focal, c.height as f64 / 2.0, 0.0, 0.0, 1.0)
    }

    fn splats(&self) -> Vec<Splat> {
        self.points.iter().map(|p| Splat { id: p.id, world: p.position, normal: p.normal }).collect()
    }

    /// Pixel position of a camera-frame point.
    pub fn project(&self, y: &Vec3) -> (f64, f64) {
        let c = &self.config;
        (c.focal * y.x / y.z + c.width as f64 / 2.0, c.focal * y.y / y.z + c.height as f64 / 2.0)
    }

    fn noise_seed(&self, pose: &CameraPose) -> u64 {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        for v in pose.rotation.wxyz().iter().chain(pose.translation.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    /// Draws splats far-to-near and reports the camera-frame point map of
    /// everything facing the camera inside the image.
    fn render_splats(&self, pose: &CameraPose, splats: &[Splat]) -> Result<(Frame, PointMap), SyntheticError> {
        let c = &self.config;
        let (w, h) = (c.width as i32, c.height as i32);
        let r = pose.rotation.to_matrix();
        let mut visible: Vec<(f64, u32, i32, i32, Vec3)> = Vec::new();
        for s in splats {
            let y = r * s.world + pose.translation;
            if y.z <= NEAR || (r * s.normal).dot(&y) >= 0.0 {
                continue;
            }
            let (u, v) = self.project(&y);
            if !(u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64) {
                continue;
            }
            visible.push((y.z, s.id, u.round() as i32, v.round() as i32, y));
        }
        if visible.len() < MIN_VISIBLE {
            return Err(SyntheticError::InsufficientVisibility { visible: visible.len() });
        }
        visible.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut img = vec![BACKGROUND; (w * h) as usize];
        for &(_, id, u, v, _) in &visible {
            let patch = &self.points[id as usize].patch;
            for py in 0..PATCH {
                let y = v + py - PATCH / 2;
                if y < 0 || y >= h {
                    continue;
                }
                for px in 0..PATCH {
                    let x = u + px - PATCH / 2;
                    if x >= 0 && x < w {
                        img[(y * w + x) as usize] = patch[(py * PATCH + px) as usize];
                    }
                }
            }
        }
        if c.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed(pose));
            let normal = Normal::new(0.0, c.noise_sigma).expect("finite sigma");
            for p in img.iter_mut() {
                let v: f64 = *p as f64 + normal.sample(&mut rng);
                *p = v.round().clamp(0.0, 255.0) as u8;
            }
        }

        let mut acc: BTreeMap<u32, (Vec3, usize)> = BTreeMap::new();
        for &(_, id, _, _, y) in &visible {
            let e = acc.entry(id).or_insert((Vec3::zeros(), 0));
            e.0 += y;
            e.1 += 1;
        }
        let pointmap = acc.into_iter().map(|(id, (s, n))| (id, s / n as f64)).collect();
        let frame = Frame::from_gray(c.width, c.height, img, 0, Provenance::Synthetic).expect("scene size is valid");
        Ok((frame, pointmap))
    }

    /// Renders the scene from `pose` (world-to-camera).
    pub fn render(&self, pose: &CameraPose) -> Result<Frame, SyntheticError> {
        self.render_splats(pose, &self.splats()).map(|(f, _)| f)
    }

    /// Ids of the points a camera at `pose` sees.
    pub fn visible_ids(&self, pose: &CameraPose) -> Result<Vec<u32>, SyntheticError> {
        self.render_splats(pose, &self.splats()).map(|(_, pm)| pm.into_iter().map(|(id, _)| id).collect())
    }
}

type FrameDigest = [u8; 32];

pub fn frame_digest(frame: &Frame) -> FrameDigest {
    let mut h = Sha256::new();
    h.update(frame.width().to_le_bytes());
    h.update(frame.height().to_le_bytes());
    h.update(frame.gray());
    h.finalize().into()
}

fn hex8(d: &FrameDigest) -> String {
    d[..4].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
struct Record {
    scene: usize,
    /// World-to-camera pose the frame was rendered from.
    pose: CameraPose,
    pointmap: PointMap,
}

/// All three roles over one or more synthetic scenes.
pub struct SyntheticBackend {
    scenes: Vec<SyntheticScene>,
    /// Scale of the per-edge rotation noise of the pose role, degrees.
    pub pose_jitter_deg: f64,
    registry: RwLock<HashMap<FrameDigest, Arc<Record>>>,
}

impl SyntheticBackend {
    pub fn new(scenes: Vec<SyntheticScene>, pose_jitter_deg: f64) -> Self {
        assert!(!scenes.is_empty(), "at least one scene");
        Self { scenes, pose_jitter_deg, registry: RwLock::new(HashMap::new()) }
    }

    pub fn single(config: SceneConfig, pose_jitter_deg: f64) -> Self {
        Self::new(vec![SyntheticScene::new(config)], pose_jitter_deg)
    }

    pub fn scene(&self, index: usize) -> &SyntheticScene {
        &self.scenes[index]
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    fn render_record(&self, scene: usize, pose: &CameraPose, splats: &[Splat]) -> Result<Frame, SyntheticError> {
        let (frame, pointmap) = self.scenes[scene].render_splats(pose, splats)?;
        let rec = Arc::new(Record { scene, pose: *pose, pointmap });
        // first registration wins, so identical pixels always resolve to one record
        self.registry.write().expect("registry lock").entry(frame_digest(&frame)).or_insert(rec);
        Ok(frame)
    }

    /// Renders and registers a frame, so later requests can refer to it.
    pub fn render(&self, scene: usize, pose: &CameraPose) -> Result<Frame, SyntheticError> {
        self.render_record(scene, pose, &self.scenes[scene].splats())
    }

    /// Registers every pose of a catalog and returns the frames in order.
    pub fn register_catalog(&self, scene: usize, poses: &[CameraPose]) -> Result<Vec<Frame>, SyntheticError> {
        poses
            .iter()
            .enumerate()
            .map(|(i, p)| self.render(scene, p).map(|f| f.relabel(i, Provenance::Synthetic)))
            .collect()
    }

    /// World pose a registered frame was rendered from.
    pub fn true_pose(&self, frame: &Frame) -> Option<CameraPose> {
        self.lookup(frame).ok().map(|r| r.pose)
    }

    fn lookup(&self, frame: &Frame) -> Result<Arc<Record>, SyntheticError> {
        let d = frame_digest(frame);
        self.registry
            .read()
            .expect("registry lock")
            .get(&d)
            .cloned()
            .ok_or_else(|| SyntheticError::UnknownFrame(hex8(&d)))
    }

    fn lookup_encoded(&self, image: &str) -> Result<(Frame, Arc<Record>), BackendError> {
        let frame = decode_image(image, 0, Provenance::Input)?;
        let rec = self.lookup(&frame)?;
        Ok((frame, rec))
    }

    fn common_scene(records: &[Arc<Record>]) -> Result<usize, SyntheticError> {
        let s = records.first().map(|r| r.scene).ok_or(SyntheticError::InvalidRequest("no frames".into()))?;
        if records.iter().any(|r| r.scene != s) {
            return Err(SyntheticError::SceneMismatch);
        }
        Ok(s)
    }
}

impl Interpolator for SyntheticBackend {
    fn interpolate(&self, req: &InterpolateRequest) -> Result<InterpolateResponse, BackendError> {
        let n = req.frame_count;
        if n < 2 {
            return Err(SyntheticError::InvalidRequest(format!("frame_count {n} < 2")).into());
        }
        let (_, a) = self.lookup_encoded(&req.start)?;
        let (_, b) = self.lookup_encoded(&req.end)?;
        let scene = Self::common_scene(&[a.clone(), b.clone()])?;
        let traj = interpolate_trajectory(&[(0, a.pose), (n - 1, b.pose)], n - 1)
            .map_err(|e| SyntheticError::InvalidRequest(e.to_string()))?;
        let mut frames = Vec::with_capacity(n);
        frames.push(req.start.clone());
        for pose in &traj.poses()[1..n - 1] {
            frames.push(encode_image(&self.render(scene, pose)?));
        }
        frames.push(req.end.clone());
        let resp = InterpolateResponse { frames };
        check_interpolate(req, &resp)?;
        Ok(resp)
    }
}

fn poses_match(a: &CameraPose, b: &CameraPose) -> bool {
    rotation_geodesic_deg(&a.rotation, &b.rotation) < 1e-9 && (a.translation - b.translation).norm() < 1e-12
}

impl ViewSynthesizer for SyntheticBackend {
    fn synthesize(&self, req: &NvsRequest) -> Result<NvsResponse, BackendError> {
        if req.relays.is_empty() {
            return Err(SyntheticError::InvalidRequest("no relay frames".into()).into());
        }
        let mut records = Vec::with_capacity(req.relays.len());
        for r in &req.relays {
            records.push(self.lookup_encoded(&r.image)?.1);
        }
        let scene_idx = Self::common_scene(&records)?;
        let scene = &self.scenes[scene_idx];

        // Gauge to world: the first relay's estimate is taken as correct.
        let gauge = req.relays[0].pose.inverse().compose(&records[0].pose);
        // Each relay misplaces what it saw by the error of its pose estimate.
        let errors: Vec<Option<CameraPose>> = req
            .relays
            .iter()
            .zip(&records)
            .map(|(relay, rec)| {
                let est = relay.pose.compose(&gauge);
                (!poses_match(&est, &rec.pose)).then(|| est.inverse().compose(&rec.pose))
            })
            .collect();
        let place = |err: &Option<CameraPose>, p: &ScenePoint| match err {
            None => Splat { id: p.id, world: p.position, normal: p.normal },
            Some(e) => Splat { id: p.id, world: e.transform_point(&p.position), normal: e.rotation.rotate(&p.normal) },
        };
        let mut observed = vec![false; scene.points.len()];
        let mut exact_drawn = vec![false; scene.points.len()];
        let mut splats = Vec::new();
        for (err, rec) in errors.iter().zip(&records) {
            for (id, _) in &rec.pointmap {
                let i = *id as usize;
                observed[i] = true;
                if err.is_none() {
                    if exact_drawn[i] {
                        continue;
                    }
                    exact_drawn[i] = true;
                }
                splats.push(place(err, &scene.points[i]));
            }
        }
        let unobserved: Vec<&ScenePoint> = scene.points.iter().filter(|p| !observed[p.id as usize]).collect();

        let mut frames = Vec::with_capacity(req.trajectory.len());
        for (t, pose) in req.trajectory.iter().enumerate() {
            // content no relay saw follows the nearest relay along the trajectory
            let nearest = (0..req.relays.len()).min_by_key(|&r| req.relays[r].index.abs_diff(t)).expect("relays");
            let mut all = splats.clone();
            all.extend(unobserved.iter().map(|p| place(&errors[nearest], p)));
            let world = pose.compose(&gauge);
            frames.push(encode_image(&self.render_record(scene_idx, &world, &all)?));
        }
        let resp = NvsResponse { frames };
        check_nvs(req, &resp)?;
        Ok(resp)
    }
}

/// Rigid transform `(R, t)` minimising `Σ‖b − (R·a + t)‖²`.
pub(crate) fn kabsch(a: &[Vec3], b: &[Vec3]) -> Option<(Mat3, Vec3)> {
    if a.len() != b.len() || a.len() < MIN_SHARED {
        return None;
    }
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vec3>() / n;
    let cb = b.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (x, y) in a.iter().zip(b) {
        h += (x - ca) * (y - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let r = vt.transpose() * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Some((r, cb - r * ca))
}

fn project_to_so3(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let d = (u * vt).determinant().signum();
    u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * vt
}

struct Edge {
    i: usize,
    j: usize,
    /// Measured rotation taking frame-i coordinates to frame j.
    r: Mat3,
    t: Vec3,
    weight: f64,
}

fn shared(a: &PointMap, b: &PointMap) -> (Vec<Vec3>, Vec<Vec3>) {
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                xa.push(a[i].1);
                xb.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (xa, xb)
}

impl SyntheticBackend {
    fn edge_noise(&self, scene: usize, da: &FrameDigest, db: &FrameDigest, sigma_deg: f64) -> Mat3 {
        let mut h = Sha256::new();
        h.update(self.scenes[scene].config.seed.to_le_bytes());
        h.update(da);
        h.update(db);
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let s = sigma_deg.to_radians() / 3f64.sqrt();
        let normal = Normal::new(0.0, s).expect("finite sigma");
        let v = Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        Rotation::from_rotation_vector(&v).to_matrix()
    }

    fn build_edges(&self, scene: usize, digests: &[FrameDigest], records: &[Arc<Record>]) -> Vec<Edge> {
        let m = records.len();
        let mut edges = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                // measure in a canonical direction so a pair always gets the same noise
                let (lo, hi) = if digests[i] <= digests[j] { (i, j) } else { (j, i) };
                let (xa, xb) = shared(&records[lo].pointmap, &records[hi].pointmap);
                let c = xa.len();
                let Some((mut r, t)) = kabsch(&xa, &xb) else { continue };
                let n = records[lo].pointmap.len().max(records[hi].pointmap.len());
                if self.pose_jitter_deg > 0.0 {
                    let sigma = self.pose_jitter_deg * (n as f64 / c as f64).sqrt();
                    r = self.edge_noise(scene, &digests[lo], &digests[hi], sigma) * r;
                }
                let weight = c as f64 / n as f64;
                if lo == i {
                    edges.push(Edge { i, j, r, t, weight });
                } else {
                    // invert lo→hi into i→j
                    let rt = r.transpose();
                    edges.push(Edge { i, j, r: rt, t: -(rt * t), weight });
                }
            }
        }
        edges
    }

    fn align(&self, scene: usize, digests: &[FrameDigest], records: &[Arc<Record>]) -> Result<Vec<CameraPose>, SyntheticError> {
        let m = records.len();
        let edges = self.build_edges(scene, digests, records);

        // maximum-weight spanning tree from frame 0 for the initial rotations
        let mut rot: Vec<Option<Mat3>> = vec![None; m];
        rot[0] = Some(Mat3::identity());
        for _ in 1..m {
            let mut best: Option<(f64, usize, Mat3)> = None;
            for e in &edges {
                let cand = match (rot[e.i], rot[e.j]) {
                    (Some(ri), None) => Some((e.j, e.r * ri)),
                    (None, Some(rj)) => Some((e.i, e.r.transpose() * rj)),
                    _ => None,
                };
                if let Some((node, r)) = cand {
                    if best.as_ref().is_none_or(|b| e.weight > b.0) {
                        best = Some((e.weight, node, r));
                    }
                }
            }
            match best {
                Some((_, node, r)) => rot[node] = Some(r),
                None => break,
            }
        }
        if let Some(k) = rot.iter().position(|r| r.is_none()) {
            return Err(SyntheticError::Disconnected(k));
        }
        let mut rot: Vec<Mat3> = rot.into_iter().map(|r| r.expect("connected")).collect();

        // weighted chordal averaging, frame 0 held fixed
        for _ in 0..100 {
            let mut change: f64 = 0.0;
            for k in 1..m {
                let mut acc = Mat3::zeros();
                for e in &edges {
                    if e.j == k {
                        acc += e.weight * (e.r * rot[e.i]);
                    } else if e.i == k {
                        acc += e.weight * (e.r.transpose() * rot[e.j]);
                    }
                }
                let next = project_to_so3(&acc);
                change = change.max((next - rot[k]).norm());
                rot[k] = next;
            }
            if change < 1e-14 {
                break;
            }
        }

        // translations by weighted least squares on t_j = R_j R_iᵀ t_i + t_ij, t_0 = 0
        let dim = 3 * (m - 1);
        let mut trans = vec![Vec3::zeros(); m];
        if dim > 0 {
            let mut a = DMatrix::<f64>::zeros(dim, dim);
            let mut b = DVector::<f64>::zeros(dim);
            for e in &edges {
                let rij = rot[e.j] * rot[e.i].transpose();
                // residual = J_j t_j + J_i t_i − t_ij with J_j = I, J_i = −R_ij
                let blocks = [(e.j, Mat3::identity()), (e.i, -rij)];
                for (p, jp) in &blocks {
                    if *p == 0 {
                        continue;
                    }
                    let rp = 3 * (p - 1);
                    let rhs = jp.transpose() * e.t * e.weight;
                    for r in 0..3 {
                        b[rp + r] += rhs[r];
                    }
                    for (q, jq) in &blocks {
                        if *q == 0 {
                            continue;
                        }
                        let cq = 3 * (q - 1);
                        let blk = jp.transpose() * jq * e.weight;
                        for r in 0..3 {
                            for c in 0..3 {
                                a[(rp + r, cq + c)] += blk[(r, c)];
                            }
                        }
                    }
                }
            }
            let x = a.lu().solve(&b).ok_or(SyntheticError::Disconnected(1))?;
            for k in 1..m {
                trans[k] = Vec3::new(x[3 * (k - 1)], x[3 * (k - 1) + 1], x[3 * (k - 1) + 2]);
            }
        }
        let mut out = vec![CameraPose::identity()];
        for k in 1..m {
            out.push(CameraPose::new(Rotation::from_matrix(&rot[k]), trans[k]));
        }
        Ok(out)
    }

    /// `exp(−RMS reprojection error)` of the best rigid fit of the scene
    /// points onto the frame's point map.
    fn confidence(&self, rec: &Record) -> f64 {
        let scene = &self.scenes[rec.scene];
        let world: Vec<Vec3> = rec.pointmap.iter().map(|(id, _)| scene.points[*id as usize].position).collect();
        let cam: Vec<Vec3> = rec.pointmap.iter().map(|(_, y)| *y).collect();
        let Some((r, t)) = kabsch(&world, &cam) else { return 0.0 };
        let mut sq = 0.0;
        let mut n = 0usize;
        for (x, y) in world.iter().zip(&cam) {
            let z = r * x + t;
            if z.z <= NEAR || y.z <= NEAR {
                continue;
            }
            let (u0, v0) = scene.project(y);
            let (u1, v1) = scene.project(&z);
            sq += (u0 - u1).powi(2) + (v0 - v1).powi(2);
            n += 1;
        }
        if n == 0 {
            return 0.0;
        }
        (-(sq / n as f64).sqrt()).exp().clamp(0.0, 1.0)
    }
}

impl PoseEstimator for SyntheticBackend {
    fn estimate(&self, req: &PoseRequest) -> Result<PoseResponse, BackendError> {
        let mut digests = Vec::with_capacity(req.frames.len());
        let mut records = Vec::with_capacity(req.frames.len());
        for f in &req.frames {
            let (frame, rec) = self.lookup_encoded(f)?;
            digests.push(frame_digest(&frame));
            records.push(rec);
        }
        let scene = Self::common_scene(&records)?;
        let poses = self.align(scene, &digests, &records)?;
        let confidences = records.iter().map(|r| self.confidence(r)).collect();
        let resp = PoseResponse { poses, confidences };
        check_pose(req, &resp)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{detect_and_describe, match_features, OrbConfig};
    use crate::geometry::relative_pose;
    use crate::robust::{ransac_fundamental, RansacConfig};

    fn backend(jitter: f64) -> SyntheticBackend {
        SyntheticBackend::single(SceneConfig { seed: 5, ..SceneConfig::default() }, jitter)
    }

    #[test]
    fn orbit_cameras_look_at_origin() {
        let p = orbit_pose(30.0, 15.0, 4.0);
        let o = p.transform_point(&Vec3::zeros());
        assert!((o - Vec3::new(0.0, 0.0, 4.0)).norm() < 1e-12);
        // world up projects upward in the image (negative camera y)
        assert!(p.rotation.rotate(&Vec3::z()).y < 0.0);
    }

    #[test]
    fn render_is_deterministic_and_featureful() {
        let b = backend(0.0);
        let pose = orbit_pose(10.0, 10.0, 4.0);
        let a = b.render(0, &pose).unwrap();
        assert_eq!(a, b.render(0, &pose).unwrap());
        let fs = detect_and_describe(&a, &OrbConfig::default()).unwrap();
        assert!(fs.len() >= 100, "{} keypoints", fs.len());
    }

    #[test]
    fn noisy_render_is_repeatable_per_pose() {
        let b = SyntheticBackend::single(SceneConfig { seed: 5, noise_sigma: 2.0, ..SceneConfig::default() }, 0.0);
        let pose = orbit_pose(10.0, 10.0, 4.0);
        let clean = backend(0.0).render(0, &pose).unwrap();
        let noisy = b.render(0, &pose).unwrap();
        assert_ne!(clean, noisy);
        assert_eq!(noisy, b.render(0, &pose).unwrap());
    }

    #[test]
    fn views_five_degrees_apart_are_epipolar_consistent() {
        let b = backend(0.0);
        let f0 = b.render(0, &orbit_pose(0.0, 10.0, 4.0)).unwrap();
        let f1 = b.render(0, &orbit_pose(5.0, 10.0, 4.0)).unwrap();
        let cfg = OrbConfig::default();
        let (a, c) = (detect_and_describe(&f0, &cfg).unwrap(), detect_and_describe(&f1, &cfg).unwrap());
        let m = match_features(&a, &c, 64);
        let fit = ransac_fundamental(&m.correspondences(&a, &c), &RansacConfig::default()).unwrap();
        assert!(fit.inlier_count as f64 >= 0.5 * m.pairs.len() as f64, "{} of {}", fit.inlier_count, m.pairs.len());
    }

    #[test]
    fn looking_away_is_insufficient() {
        let s = SyntheticScene::new(SceneConfig::default());
        let away = CameraPose::new(Rotation::identity(), Vec3::new(0.0, 0.0, -4.0));
        assert!(matches!(s.render(&away), Err(SyntheticError::InsufficientVisibility { .. })));
    }

    #[test]
    fn interpolation_endpoints_echo_inputs() {
        let b = backend(0.0);
        let (pa, pb) = (orbit_pose(0.0, 10.0, 4.0), orbit_pose(60.0, 10.0, 4.0));
        let (a, c) = (b.render(0, &pa).unwrap(), b.render(0, &pb).unwrap());
        let req = InterpolateRequest { start: encode_image(&a), end: encode_image(&c), frame_count: 16, prompt: None };
        let resp = b.interpolate(&req).unwrap();
        assert_eq!(resp.frames.len(), 16);
        assert_eq!(decode_image(&resp.frames[0], 0, Provenance::Synthetic).unwrap(), a);
        assert_eq!(decode_image(&resp.frames[15], 0, Provenance::Synthetic).unwrap(), c);
        let mid = decode_image(&resp.frames[5], 0, Provenance::Synthetic).unwrap();
        let true_mid = b.true_pose(&mid).unwrap();
        let traj = interpolate_trajectory(&[(0, pa), (15, pb)], 15).unwrap();
        assert_eq!(true_mid, traj.poses()[5]);
    }

    #[test]
    fn exact_pose_passthrough() {
        let b = backend(0.0);
        let poses: Vec<CameraPose> = [0.0, 20.0, 45.0, 70.0].iter().map(|az| orbit_pose(*az, 12.0, 4.0)).collect();
        let frames: Vec<String> = poses.iter().map(|p| encode_image(&b.render(0, p).unwrap())).collect();
        let resp = b.estimate(&PoseRequest { frames }).unwrap();
        assert_eq!(resp.poses[0], CameraPose::identity());
        for (k, p) in poses.iter().enumerate() {
            let gt = relative_pose(&poses[0], p);
            assert!(rotation_geodesic_deg(&resp.poses[k].rotation, &gt.rotation) < 1e-9);
            assert!((resp.poses[k].translation - gt.translation).norm() < 1e-9);
            assert!(resp.confidences[k] > 1.0 - 1e-9);
        }
    }

    #[test]
    fn jitter_perturbs_but_is_deterministic() {
        let b = backend(3.0);
        let poses: Vec<CameraPose> = [0.0, 60.0].iter().map(|az| orbit_pose(*az, 12.0, 4.0)).collect();
        let frames: Vec<String> = poses.iter().map(|p| encode_image(&b.render(0, p).unwrap())).collect();
        let req = PoseRequest { frames };
        let r1 = b.estimate(&req).unwrap();
        assert_eq!(r1, b.estimate(&req).unwrap());
        let gt = relative_pose(&poses[0], &poses[1]);
        let err = rotation_geodesic_deg(&r1.poses[1].rotation, &gt.rotation);
        assert!(err > 0.1 && err < 20.0, "error {err}");
    }

    #[test]
    fn nvs_with_exact_relays_matches_direct_render() {
        let b = backend(0.0);
        let (pa, pb) = (orbit_pose(0.0, 10.0, 4.0), orbit_pose(70.0, 10.0, 4.0));
        let dc = interpolate_trajectory(&[(0, pa), (15, pb)], 15).unwrap();
        let relays: Vec<RelayFrame> = [0usize, 1, 14, 15]
            .iter()
            .zip([0usize, 2, 22, 24])
            .map(|(&i, t)| RelayFrame {
                index: t,
                image: encode_image(&b.render(0, &dc.poses()[i]).unwrap()),
                pose: relative_pose(&pa, &dc.poses()[i]),
            })
            .collect();
        let keys: Vec<(usize, CameraPose)> = relays.iter().map(|r| (r.index, r.pose)).collect();
        let traj = interpolate_trajectory(&keys, 24).unwrap();
        let req = NvsRequest { relays, trajectory: traj.poses().to_vec() };
        let resp = b.synthesize(&req).unwrap();
        assert_eq!(resp.frames.len(), 25);
        for (t, enc) in resp.frames.iter().enumerate() {
            let direct = backend(0.0).scene(0).render(&traj.poses()[t].compose(&pa)).unwrap();
            assert_eq!(decode_image(enc, 0, Provenance::Synthetic).unwrap(), direct, "frame {t}");
        }
    }

    #[test]
    fn unknown_frames_are_rejected() {
        let b = backend(0.0);
        let stranger = Frame::from_gray(64, 64, vec![7; 4096], 0, Provenance::Input).unwrap();
        let req = PoseRequest { frames: vec![encode_image(&stranger)] };
        assert!(matches!(b.estimate(&req), Err(BackendError::Synthetic(SyntheticError::UnknownFrame(_)))));
    }

    #[test]
    fn kabsch_recovers_rigid_motion() {
        let r = Rotation::about_x_deg(20.0) * Rotation::about_z_deg(-35.0);
        let t = Vec3::new(0.3, -1.0, 2.0);
        let a: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, (i * i) as f64 * 0.1, (i % 3) as f64)).collect();
        let b: Vec<Vec3> = a.iter().map(|x| r.rotate(x) + t).collect();
        let (rr, tt) = kabsch(&a, &b).unwrap();
        assert!((rr - r.to_matrix()).norm() < 1e-12);
        assert!((tt - t).norm() < 1e-12);
    }
}
