//! Frame selection: relay patterns over interpolated clips, the
//! feature-matching score `S(t) = N₀(t) + N_T(t)`, top-k selection, and a
//! confidence-percentile baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Frame, Matcher};
use crate::robust::{ransac_fundamental, RansacConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectorError {
    #[error("relay pattern of {n} frames does not fit a sequence of {len}")]
    PatternOutOfRange { n: usize, len: usize },
    #[error("{frames} frames but {confidences} confidences")]
    Misaligned { frames: usize, confidences: usize },
    #[error("percentile {0} outside (0, 1]")]
    Percentile(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameScore {
    pub t: usize,
    pub n0: usize,
    pub n_t: usize,
    pub s: usize,
}

impl FrameScore {
    pub fn new(t: usize, n0: usize, n_t: usize) -> Self {
        Self { t, n0, n_t, s: n0 + n_t }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub k: usize,
    /// Minimum total inlier count `s` for a frame to be eligible.
    pub score_threshold: usize,
    /// Relay pattern size: the first and last `relay_frames / 2` frames.
    pub relay_frames: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 6, score_threshold: 30, relay_frames: 4 }
    }
}

/// Relay indices for a pattern of `n` frames over a sequence of `len`:
/// `{0, …, n/2−1} ∪ {T−n/2+1, …, T}`.
pub fn relay_indices(len: usize, n: usize) -> Result<Vec<usize>, SelectorError> {
    if n < 2 || n % 2 != 0 || n > len {
        return Err(SelectorError::PatternOutOfRange { n, len });
    }
    let half = n / 2;
    Ok((0..half).chain(len - half..len).collect())
}

/// The frames at the relay indices, in order.
pub fn select_relay(frames: &[Frame], n: usize) -> Result<Vec<&Frame>, SelectorError> {
    Ok(relay_indices(frames.len(), n)?.into_iter().map(|i| &frames[i]).collect())
}

fn inliers_between<M: Matcher>(matcher: &M, a: &M::Features, b: &M::Features, cfg: &RansacConfig) -> usize {
    let corrs = matcher.correspond(a, b);
    if corrs.len() < 8 {
        return 0;
    }
    ransac_fundamental(&corrs, cfg).map(|r| r.inlier_count).unwrap_or(0)
}

/// Scores every candidate against both anchors. Detection or fitting
/// failures count as zero on the affected side, so scoring always completes.
pub fn fms_score_all<M: Matcher>(
    candidates: &[Frame],
    start: &Frame,
    end: &Frame,
    matcher: &M,
    ransac: &RansacConfig,
) -> Vec<FrameScore> {
    let (fs, fe) = rayon::join(|| matcher.describe(start).ok(), || matcher.describe(end).ok());
    candidates
        .par_iter()
        .map(|c| {
            let Ok(fc) = matcher.describe(c) else {
                return FrameScore::new(c.index, 0, 0);
            };
            let n0 = fs.as_ref().map_or(0, |f| inliers_between(matcher, &fc, f, ransac));
            let n_t = fe.as_ref().map_or(0, |f| inliers_between(matcher, &fc, f, ransac));
            FrameScore::new(c.index, n0, n_t)
        })
        .collect()
}

/// Top-`k` frames with `s ≥ threshold`, returned in ascending `t`.
///
/// Ranking is by `s` descending, then distance to the clip centre `last / 2`,
/// then lower `t`.
pub fn select_top_k(scores: &[FrameScore], cfg: &SelectionConfig, last: usize) -> Vec<usize> {
    let mut eligible: Vec<&FrameScore> = scores.iter().filter(|s| s.s >= cfg.score_threshold).collect();
    eligible.sort_by_key(|s| (std::cmp::Reverse(s.s), (2 * s.t).abs_diff(last), s.t));
    let mut out: Vec<usize> = eligible.iter().take(cfg.k).map(|s| s.t).collect();
    out.sort_unstable();
    out
}

/// Indices of the top `⌈percentile·N⌉` frames by confidence, ascending.
/// Ties go to the lower index.
pub fn select_by_confidence(
    indices: &[usize],
    confidences: &[f64],
    percentile: f64,
) -> Result<Vec<usize>, SelectorError> {
    if indices.len() != confidences.len() {
        return Err(SelectorError::Misaligned { frames: indices.len(), confidences: confidences.len() });
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(SelectorError::Percentile(percentile));
    }
    let n = indices.len();
    let keep = ((percentile * n as f64 - 1e-9).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| if confidences[i].is_nan() { f64::NEG_INFINITY } else { confidences[i] };
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut out: Vec<usize> = order[..keep].iter().map(|&i| indices[i]).collect();
    out.sort_unstable();
    Ok(out)
}
