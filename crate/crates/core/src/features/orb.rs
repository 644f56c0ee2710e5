use image::imageops::{self, FilterType};
use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::pattern::BIT_PATTERN_31;
use super::FeatureError;

/// Pixels kept clear of the level border so every pattern and centroid
/// sample stays in bounds (pattern radius is at most 13·√2 < 19).
const EDGE: i32 = 19;
const CENTROID_RADIUS: i32 = 15;
const HARRIS_BLOCK: i32 = 7;
const BLUR_SIGMA: f32 = 2.0;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbConfig {
    /// Maximum keypoints kept per frame.
    pub budget: usize,
    pub fast_threshold: u8,
    /// Floor for adaptive threshold halving.
    pub min_fast_threshold: u8,
    pub levels: usize,
    pub scale_factor: f32,
    pub harris_k: f32,
}

impl Default for OrbConfig {
    fn default() -> Self {
        Self {
            budget: 2000,
            fast_threshold: 20,
            min_fast_threshold: 5,
            levels: 4,
            scale_factor: 1.2,
            harris_k: 0.04,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Position in level-0 pixels.
    pub x: f32,
    pub y: f32,
    /// Harris corner response.
    pub response: f32,
    /// Orientation in radians.
    pub angle: f32,
    pub octave: u8,
}

/// 256-bit binary descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

struct Level {
    img: GrayImage,
    smooth: GrayImage,
    sx: f32,
    sy: f32,
}

impl Level {
    fn w(&self) -> i32 {
        self.img.width() as i32
    }

    fn h(&self) -> i32 {
        self.img.height() as i32
    }
}

fn at(img: &GrayImage, x: i32, y: i32) -> i32 {
    let x = x.clamp(0, img.width() as i32 - 1) as u32;
    let y = y.clamp(0, img.height() as i32 - 1) as u32;
    img.as_raw()[(y * img.width() + x) as usize] as i32
}

fn build_pyramid(frame: &Frame, cfg: &OrbConfig) -> Vec<Level> {
    let base = frame.gray_image();
    let (w0, h0) = (base.width() as f32, base.height() as f32);
    let mut levels = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels.max(1) {
        let s = cfg.scale_factor.powi(l as i32);
        let w = (w0 / s).round() as u32;
        let h = (h0 / s).round() as u32;
        if w < 32 || h < 32 {
            break;
        }
        let img = if l == 0 { base.clone() } else { imageops::resize(&base, w, h, FilterType::Triangle) };
        let smooth = imageops::blur(&img, BLUR_SIGMA);
        levels.push(Level { img, smooth, sx: w0 / w as f32, sy: h0 / h as f32 });
    }
    levels
}

fn is_fast_corner(img: &GrayImage, x: i32, y: i32, th: i32) -> bool {
    let p = at(img, x, y);
    let hi = p + th;
    let lo = p - th;
    // at least two compass points must agree for any 9-arc
    let mut up = 0;
    let mut down = 0;
    for k in [0usize, 4, 8, 12] {
        let v = at(img, x + CIRCLE[k].0, y + CIRCLE[k].1);
        up += (v > hi) as i32;
        down += (v < lo) as i32;
    }
    if up < 2 && down < 2 {
        return false;
    }
    let mut bright = 0u32;
    let mut dark = 0u32;
    for (k, (dx, dy)) in CIRCLE.iter().enumerate() {
        let v = at(img, x + dx, y + dy);
        bright |= ((v > hi) as u32) << k;
        dark |= ((v < lo) as u32) << k;
    }
    has_arc(bright) || has_arc(dark)
}

fn has_arc(mask: u32) -> bool {
    let m = mask | (mask << 16);
    let mut r = m;
    for i in 1..9 {
        r &= m >> i;
    }
    r != 0
}

fn harris(img: &GrayImage, x: i32, y: i32, k: f32) -> f32 {
    let r = HARRIS_BLOCK / 2;
    let (mut sxx, mut syy, mut sxy) = (0f32, 0f32, 0f32);
    for v in -r..=r {
        for u in -r..=r {
            let (cx, cy) = (x + u, y + v);
            let gx = (at(img, cx + 1, cy - 1) + 2 * at(img, cx + 1, cy) + at(img, cx + 1, cy + 1))
                - (at(img, cx - 1, cy - 1) + 2 * at(img, cx - 1, cy) + at(img, cx - 1, cy + 1));
            let gy = (at(img, cx - 1, cy + 1) + 2 * at(img, cx, cy + 1) + at(img, cx + 1, cy + 1))
                - (at(img, cx - 1, cy - 1) + 2 * at(img, cx, cy - 1) + at(img, cx + 1, cy - 1));
            let (gx, gy) = (gx as f32, gy as f32);
            sxx += gx * gx;
            syy += gy * gy;
            sxy += gx * gy;
        }
    }
    // scale keeps responses in a readable range; ranking is unaffected
    let n = (4.0 * 255.0 * HARRIS_BLOCK as f32).powi(-2);
    let (sxx, syy, sxy) = (sxx * n, syy * n, sxy * n);
    sxx * syy - sxy * sxy - k * (sxx + syy) * (sxx + syy)
}

struct Candidate {
    level: usize,
    x: i32,
    y: i32,
    response: f32,
}

fn detect_level(level: &Level, li: usize, th: i32, k: f32, out: &mut Vec<Candidate>) {
    let (w, h) = (level.w(), level.h());
    if w <= 2 * EDGE || h <= 2 * EDGE {
        return;
    }
    let mut resp = vec![f32::NEG_INFINITY; (w * h) as usize];
    let mut corners = Vec::new();
    for y in EDGE..h - EDGE {
        for x in EDGE..w - EDGE {
            if is_fast_corner(&level.img, x, y, th) {
                let r = harris(&level.img, x, y, k);
                resp[(y * w + x) as usize] = r;
                corners.push((x, y, r));
            }
        }
    }
    // 3×3 suppression; plateaus keep their first pixel in raster order
    for (x, y, r) in corners {
        let mut keep = true;
        'n: for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let o = resp[((y + dy) * w + x + dx) as usize];
                let earlier = dy < 0 || (dy == 0 && dx < 0);
                if o > r || (earlier && o == r) {
                    keep = false;
                    break 'n;
                }
            }
        }
        if keep {
            out.push(Candidate { level: li, x, y, response: r });
        }
    }
}

fn orientation(img: &GrayImage, x: i32, y: i32) -> f32 {
    let (mut m01, mut m10) = (0i64, 0i64);
    let r2 = CENTROID_RADIUS * CENTROID_RADIUS;
    for v in -CENTROID_RADIUS..=CENTROID_RADIUS {
        for u in -CENTROID_RADIUS..=CENTROID_RADIUS {
            if u * u + v * v > r2 {
                continue;
            }
            let i = at(img, x + u, y + v) as i64;
            m10 += u as i64 * i;
            m01 += v as i64 * i;
        }
    }
    (m01 as f32).atan2(m10 as f32)
}

fn describe(smooth: &GrayImage, x: i32, y: i32, angle: f32) -> Descriptor {
    let (s, c) = angle.sin_cos();
    let mut bits = [0u64; 4];
    for i in 0..256 {
        let (ax, ay) = BIT_PATTERN_31[2 * i];
        let (bx, by) = BIT_PATTERN_31[2 * i + 1];
        let rot = |px: i32, py: i32| {
            let rx = (c * px as f32 - s * py as f32).round() as i32;
            let ry = (s * px as f32 + c * py as f32).round() as i32;
            at(smooth, x + rx, y + ry)
        };
        if rot(ax, ay) < rot(bx, by) {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    Descriptor(bits)
}

/// FAST-9 corners over a scale pyramid, ranked by Harris response and
/// described with steered binary intensity tests.
pub fn detect_and_describe(frame: &Frame, cfg: &OrbConfig) -> Result<FeatureSet, FeatureError> {
    let levels = build_pyramid(frame, cfg);
    let budget = cfg.budget.max(1);
    let floor = cfg.min_fast_threshold.max(1) as i32;
    let mut th = (cfg.fast_threshold as i32).max(floor);
    let mut cands = Vec::new();
    loop {
        cands.clear();
        for (li, level) in levels.iter().enumerate() {
            detect_level(level, li, th, cfg.harris_k, &mut cands);
        }
        if cands.len() >= budget / 4 || th <= floor {
            break;
        }
        th = (th / 2).max(floor);
    }
    if cands.is_empty() {
        return Err(FeatureError::EmptyFrame);
    }
    cands.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.level.cmp(&b.level))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    cands.truncate(budget);

    let mut keypoints = Vec::with_capacity(cands.len());
    let mut descriptors = Vec::with_capacity(cands.len());
    for c in &cands {
        let level = &levels[c.level];
        let angle = orientation(&level.img, c.x, c.y);
        descriptors.push(describe(&level.smooth, c.x, c.y, angle));
        keypoints.push(Keypoint {
            x: (c.x as f32 + 0.5) * level.sx - 0.5,
            y: (c.y as f32 + 0.5) * level.sy - 0.5,
            response: c.response,
            angle,
            octave: c.level as u8,
        });
    }
    Ok(FeatureSet { keypoints, descriptors })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn checkerboard(w: u32, h: u32, cell: u32) -> Frame {
        let gray = (0..h)
            .flat_map(|y| (0..w).map(move |x| if (x / cell + y / cell) % 2 == 0 { 40 } else { 210 }))
            .collect();
        Frame::from_gray(w, h, gray, 0, Provenance::Synthetic).unwrap()
    }

    /// Random blocky texture; `shift` translates the content right/down.
    pub(crate) fn blocks(w: u32, h: u32, seed: u64, shift: (i32, i32)) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<u8> = (0..64 * 64).map(|_| rng.random()).collect();
        let gray = (0..h as i32)
            .flat_map(|y| {
                let cells = &cells;
                (0..w as i32).map(move |x| {
                    let (u, v) = ((x - shift.0).rem_euclid(768) / 12, (y - shift.1).rem_euclid(768) / 12);
                    cells[(v * 64 + u) as usize]
                })
            })
            .collect();
        Frame::from_gray(w, h, gray, 0, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn arc_detection() {
        assert!(has_arc(0b1_1111_1111));
        assert!(!has_arc(0b1111_1111));
        // wraps around bit 15 → bit 0
        assert!(has_arc(0b1111_0000_0000_0000 | 0b1_1111));
        assert!(!has_arc(0b0101_0101_0101_0101));
    }

    #[test]
    fn uniform_frame_is_empty() {
        let f = Frame::from_gray(128, 96, vec![128; 128 * 96], 0, Provenance::Synthetic).unwrap();
        assert_eq!(detect_and_describe(&f, &OrbConfig::default()), Err(FeatureError::EmptyFrame));
    }

    #[test]
    fn checkerboard_is_detected_deterministically() {
        let f = checkerboard(512, 320, 16);
        let a = detect_and_describe(&f, &OrbConfig::default()).unwrap();
        let b = detect_and_describe(&f, &OrbConfig::default()).unwrap();
        assert!(a.len() >= 100, "{} keypoints", a.len());
        assert_eq!(a, b);
    }

    #[test]
    fn budget_is_respected() {
        let f = blocks(512, 320, 4, (0, 0));
        for budget in [1usize, 50, 2000] {
            let cfg = OrbConfig { budget, ..OrbConfig::default() };
            let fs = detect_and_describe(&f, &cfg).unwrap();
            assert!(fs.len() <= budget);
            assert_eq!(fs.keypoints.len(), fs.descriptors.len());
            for k in &fs.keypoints {
                assert!(k.x >= 0.0 && k.x < 512.0 && k.y >= 0.0 && k.y < 320.0);
            }
        }
    }

    #[test]
    fn descriptors_tolerate_in_plane_rotation() {
        // Rotate a texture by 15° about the centre and compare descriptors at
        // corresponding positions, each steered by its own orientation estimate.
        let src = blocks(512, 320, 9, (0, 0));
        let img = src.gray_image();
        let theta = 15f32.to_radians();
        let (s, c) = theta.sin_cos();
        let (cx, cy) = (255.5f32, 159.5f32);
        let rotated = GrayImage::from_fn(512, 320, |x, y| {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let (u, v) = (c * dx + s * dy + cx, -s * dx + c * dy + cy);
            let (u0, v0) = (u.floor() as i32, v.floor() as i32);
            let (fu, fv) = (u - u0 as f32, v - v0 as f32);
            let p = |a: i32, b: i32| at(&img, a, b) as f32;
            let val = p(u0, v0) * (1.0 - fu) * (1.0 - fv)
                + p(u0 + 1, v0) * fu * (1.0 - fv)
                + p(u0, v0 + 1) * (1.0 - fu) * fv
                + p(u0 + 1, v0 + 1) * fu * fv;
            image::Luma([val.round() as u8])
        });
        let smooth_b = imageops::blur(&rotated, BLUR_SIGMA);
        let fs = detect_and_describe(&src, &OrbConfig { levels: 1, ..OrbConfig::default() }).unwrap();
        let (mut total, mut good) = (0, 0);
        for (kp, d) in fs.keypoints.iter().zip(&fs.descriptors) {
            let (dx, dy) = (kp.x - cx, kp.y - cy);
            let (x, y) = ((c * dx - s * dy + cx).round() as i32, (s * dx + c * dy + cy).round() as i32);
            if x < 60 || y < 60 || x > 452 || y > 260 {
                continue;
            }
            total += 1;
            let db = describe(&smooth_b, x, y, orientation(&rotated, x, y));
            good += (d.hamming(&db) <= 64) as i32;
        }
        assert!(total >= 50, "{total} usable keypoints");
        let frac = good as f64 / total as f64;
        assert!(frac >= 0.7, "only {frac:.2} of descriptors within 64 bits");
    }
}
