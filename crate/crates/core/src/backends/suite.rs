//! Seeded suites of synthetic views: one scene per pair, written to disk as
//! PNGs with a catalog, a pair manifest and the spec needed to rebuild the
//! backend in another process.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::{orbit_pose, SceneConfig, SyntheticBackend, SyntheticError, SyntheticScene};
use crate::eval::{CatalogEntry, PairRecord};
use crate::features::Frame;
use crate::geometry::CameraPose;

/// Orbit radius of suite cameras.
pub const SUITE_DISTANCE: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteView {
    pub id: String,
    pub scene: usize,
    pub pose: CameraPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub scenes: Vec<SceneConfig>,
    pub views: Vec<SuiteView>,
    /// Consecutive view indices forming evaluation pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Parameters of [`SyntheticSuite::pairs`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSuiteConfig {
    pub pairs: usize,
    pub seed: u64,
    pub yaw_lo: f64,
    pub yaw_hi: f64,
    pub elevation_lo: f64,
    pub elevation_hi: f64,
    pub scene: SceneConfig,
}

impl Default for PairSuiteConfig {
    fn default() -> Self {
        Self { pairs: 20, seed: 0, yaw_lo: 50.0, yaw_hi: 90.0, elevation_lo: 10.0, elevation_hi: 25.0, scene: SceneConfig::default() }
    }
}

impl SyntheticSuite {
    /// `cfg.pairs` scenes each viewed twice from one elevation, the azimuths
    /// differing by a yaw drawn from `[yaw_lo, yaw_hi)`. Scene seeds and
    /// cameras all derive from `cfg.seed`.
    pub fn pairs(cfg: &PairSuiteConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut suite = SyntheticSuite { scenes: Vec::new(), views: Vec::new(), pairs: Vec::new() };
        for i in 0..cfg.pairs {
            let scene = SceneConfig { seed: rng.random(), ..cfg.scene.clone() };
            let az = rng.random_range(0.0..360.0);
            let yaw = if cfg.yaw_hi > cfg.yaw_lo { rng.random_range(cfg.yaw_lo..cfg.yaw_hi) } else { cfg.yaw_lo };
            let el = if cfg.elevation_hi > cfg.elevation_lo { rng.random_range(cfg.elevation_lo..cfg.elevation_hi) } else { cfg.elevation_lo };
            suite.scenes.push(scene);
            let v = suite.views.len();
            suite.views.push(SuiteView { id: format!("s{i:03}_a"), scene: i, pose: orbit_pose(az, el, SUITE_DISTANCE) });
            suite.views.push(SuiteView { id: format!("s{i:03}_b"), scene: i, pose: orbit_pose(az + yaw, el, SUITE_DISTANCE) });
            suite.pairs.push((v, v + 1));
        }
        suite
    }

    /// A backend holding every scene with all views registered; frames in view order.
    pub fn backend(&self, pose_jitter_deg: f64) -> Result<(SyntheticBackend, Vec<Frame>), SyntheticError> {
        let be = SyntheticBackend::new(self.scenes.iter().cloned().map(SyntheticScene::new).collect(), pose_jitter_deg);
        let frames = self.views.iter().map(|v| be.render(v.scene, &v.pose)).collect::<Result<Vec<_>, _>>()?;
        Ok((be, frames))
    }

    pub fn image_path(view: &SuiteView) -> String {
        format!("{}.png", view.id)
    }

    pub fn catalog(&self) -> Vec<CatalogEntry> {
        self.views
            .iter()
            .map(|v| CatalogEntry {
                id: v.id.clone(),
                path: Self::image_path(v),
                rotation: v.pose.rotation,
                translation: v.pose.translation.into(),
            })
            .collect()
    }

    pub fn manifest(&self, dataset_tag: &str) -> Vec<PairRecord> {
        self.pairs
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (&self.views[i], &self.views[j]);
                PairRecord {
                    id: format!("{}__{}", a.id, b.id),
                    start_path: Self::image_path(a),
                    end_path: Self::image_path(b),
                    gt_rotation_quat_start: a.pose.rotation,
                    gt_rotation_quat_end: b.pose.rotation,
                    gt_translation_start: a.pose.translation.into(),
                    gt_translation_end: Some(b.pose.translation.into()),
                    dataset_tag: dataset_tag.to_string(),
                    yaw_deg: Some(crate::eval::pair_yaw_deg(&a.pose.rotation, &b.pose.rotation)),
                }
            })
            .collect()
    }

    /// Writes `suite.json`, `catalog.jsonl`, `manifest.jsonl` and one PNG per view.
    pub fn write(&self, dir: &Path, frames: &[Frame], dataset_tag: &str) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (v, f) in self.views.iter().zip(frames) {
            fs::write(dir.join(Self::image_path(v)), f.to_png())?;
        }
        fs::write(dir.join("suite.json"), serde_json::to_string_pretty(self).expect("suite serialises"))?;
        fs::write(dir.join("catalog.jsonl"), jsonl(&self.catalog()))?;
        fs::write(dir.join("manifest.jsonl"), jsonl(&self.manifest(dataset_tag)))?;
        Ok(())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| serde_json::to_string(r).expect("rows serialise") + "\n").collect()
}
