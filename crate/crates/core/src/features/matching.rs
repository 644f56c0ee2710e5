use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::orb::{detect_and_describe, FeatureSet, OrbConfig};
use super::FeatureError;
use crate::robust::Correspondence;

/// Default Hamming cutoff for accepted matches.
pub const DEFAULT_MAX_DISTANCE: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub a: usize,
    pub b: usize,
    pub distance: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    /// Filled by the robust fitting stage; all false until then.
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
}

impl MatchResult {
    pub fn set_inliers(&mut self, mask: Vec<bool>) {
        assert_eq!(mask.len(), self.pairs.len());
        self.inlier_count = mask.iter().filter(|m| **m).count();
        self.inlier_mask = mask;
    }

    /// Pixel correspondences for each pair, in pair order.
    pub fn correspondences(&self, a: &FeatureSet, b: &FeatureSet) -> Vec<Correspondence> {
        self.pairs
            .iter()
            .map(|m| {
                let (ka, kb) = (&a.keypoints[m.a], &b.keypoints[m.b]);
                Correspondence::new([ka.x as f64, ka.y as f64], [kb.x as f64, kb.y as f64])
            })
            .collect()
    }
}

/// Mutual nearest-neighbour Hamming matching.
///
/// Distance ties resolve to the lowest index on either side, so swapping the
/// arguments yields the transposed pair set. Pairs are ordered by index in `a`.
pub fn match_features(a: &FeatureSet, b: &FeatureSet, max_distance: u32) -> MatchResult {
    let (na, nb) = (a.descriptors.len(), b.descriptors.len());
    let mut best_ab = vec![(u32::MAX, usize::MAX); na];
    let mut best_ba = vec![(u32::MAX, usize::MAX); nb];
    for (i, da) in a.descriptors.iter().enumerate() {
        for (j, db) in b.descriptors.iter().enumerate() {
            let d = da.hamming(db);
            if d < best_ab[i].0 {
                best_ab[i] = (d, j);
            }
            if d < best_ba[j].0 {
                best_ba[j] = (d, i);
            }
        }
    }
    let pairs: Vec<MatchPair> = best_ab
        .iter()
        .enumerate()
        .filter(|(i, (d, j))| *j != usize::MAX && best_ba[*j].1 == *i && *d <= max_distance)
        .map(|(i, (d, j))| MatchPair { a: i, b: *j, distance: *d })
        .collect();
    let n = pairs.len();
    MatchResult { pairs, inlier_mask: vec![false; n], inlier_count: 0 }
}

/// Describe-then-correspond interface behind frame scoring.
///
/// Implementations own their feature representation, so alternative
/// descriptors or dense learned matchers can plug in without touching callers.
pub trait Matcher: Send + Sync {
    type Features: Send + Sync;

    fn name(&self) -> &'static str;

    fn describe(&self, frame: &Frame) -> Result<Self::Features, FeatureError>;

    fn correspond(&self, a: &Self::Features, b: &Self::Features) -> Vec<Correspondence>;
}

/// The built-in binary-descriptor matcher.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbMatcher {
    pub orb: OrbConfig,
    pub max_distance: Option<u32>,
}

impl OrbMatcher {
    pub fn new(orb: OrbConfig) -> Self {
        Self { orb, max_distance: None }
    }

    fn cutoff(&self) -> u32 {
        self.max_distance.unwrap_or(DEFAULT_MAX_DISTANCE)
    }
}

impl Matcher for OrbMatcher {
    type Features = FeatureSet;

    fn name(&self) -> &'static str {
        "orb"
    }

    fn describe(&self, frame: &Frame) -> Result<FeatureSet, FeatureError> {
        detect_and_describe(frame, &self.orb)
    }

    fn correspond(&self, a: &FeatureSet, b: &FeatureSet) -> Vec<Correspondence> {
        match_features(a, b, self.cutoff()).correspondences(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::orb::tests::blocks;
    use crate::features::orb::{Descriptor, Keypoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kp = Keypoint { x: 0.0, y: 0.0, response: 0.0, angle: 0.0, octave: 0 };
        FeatureSet {
            keypoints: vec![kp; n],
            descriptors: (0..n).map(|_| Descriptor(rng.random())).collect(),
        }
    }

    /// Exhaustive mutual-nearest-neighbour oracle with explicit lowest-index ties.
    fn brute_force(a: &FeatureSet, b: &FeatureSet, max_distance: u32) -> Vec<(usize, usize)> {
        let nn = |x: &Descriptor, ys: &[Descriptor]| {
            let mut best = 0;
            for (j, y) in ys.iter().enumerate() {
                if x.hamming(y) < x.hamming(&ys[best]) {
                    best = j;
                }
            }
            best
        };
        let mut out = Vec::new();
        for (i, da) in a.descriptors.iter().enumerate() {
            let j = nn(da, &b.descriptors);
            if nn(&b.descriptors[j], &a.descriptors) == i && da.hamming(&b.descriptors[j]) <= max_distance {
                out.push((i, j));
            }
        }
        out
    }

    #[test]
    fn self_match_is_complete() {
        let s = random_set(300, 1);
        let m = match_features(&s, &s, 64);
        assert_eq!(m.pairs.len(), 300);
        assert!(m.pairs.iter().all(|p| p.a == p.b && p.distance == 0));
        assert_eq!(m.inlier_mask, vec![false; 300]);
    }

    #[test]
    fn disjoint_sets_with_zero_cutoff_do_not_match() {
        let m = match_features(&random_set(100, 2), &random_set(100, 3), 0);
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn swapping_arguments_transposes_pairs() {
        let (a, b) = (random_set(200, 4), random_set(150, 5));
        let ab: Vec<(usize, usize)> = match_features(&a, &b, 256).pairs.iter().map(|p| (p.a, p.b)).collect();
        let mut ba: Vec<(usize, usize)> = match_features(&b, &a, 256).pairs.iter().map(|p| (p.b, p.a)).collect();
        ba.sort();
        assert_eq!(ab, ba);
    }

    #[test]
    fn translated_copy_matches_like_brute_force() {
        let cfg = OrbConfig::default();
        let fa = detect_and_describe(&blocks(512, 320, 21, (0, 0)), &cfg).unwrap();
        let fb = detect_and_describe(&blocks(512, 320, 21, (7, 4)), &cfg).unwrap();
        let m = match_features(&fa, &fb, 64);
        let got: Vec<(usize, usize)> = m.pairs.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(got, brute_force(&fa, &fb, 64));
        let frac = m.pairs.len() as f64 / fa.len().min(fb.len()) as f64;
        assert!(frac >= 0.8, "matched fraction {frac:.2}");
    }

    #[test]
    fn inlier_count_tracks_mask() {
        let s = random_set(5, 6);
        let mut m = match_features(&s, &s, 64);
        m.set_inliers(vec![true, false, true, true, false]);
        assert_eq!(m.inlier_count, 3);
    }
}
