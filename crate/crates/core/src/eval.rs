//! Angular error metrics, recall tables, AUC and yaw-bucket pair sampling.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    relative_pose, relative_yaw_deg, rotation_geodesic_deg, translation_angular_deg, CameraPose, GeometryError,
    Rotation, Vec3,
};

/// Recall thresholds reported in every table, degrees.
pub const RECALL_THRESHOLDS: [f64; 3] = [5.0, 15.0, 30.0];
/// Upper limit of the AUC integration, degrees.
pub const AUC_MAX_DEG: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no errors to aggregate")]
    EmptySet,
    #[error("no catalog pair has relative yaw in [{lo}, {hi})")]
    NoPairsInRange { lo: f64, hi: f64 },
    #[error("AUC step must be positive and divide {AUC_MAX_DEG}, got {0}")]
    BadStep(f64),
}

/// Percentage of errors strictly below `theta`.
pub fn recall_at(errors: &[f64], theta: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let hits = errors.iter().filter(|e| **e < theta).count();
    Ok(100.0 * hits as f64 / errors.len() as f64)
}

/// Normalised trapezoid area under the recall curve on `[0, 30]`, sampled
/// every `step` degrees. The curve at 0 takes its right limit (the share of
/// errors equal to zero), so perfect estimates score 100.
pub fn auc_single(errors: &[f64], step: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let bins = AUC_MAX_DEG / step;
    if !(step > 0.0) || (bins - bins.round()).abs() > 1e-9 {
        return Err(EvalError::BadStep(step));
    }
    let bins = bins.round() as usize;
    let n = errors.len() as f64;
    let at_zero = 100.0 * errors.iter().filter(|e| **e <= 0.0).count() as f64 / n;
    let mut prev = at_zero;
    let mut area = 0.0;
    for k in 1..=bins {
        let r = recall_at(errors, k as f64 * step)?;
        area += 0.5 * (prev + r) * step;
        prev = r;
    }
    Ok(area / AUC_MAX_DEG)
}

/// The smaller of the rotation and translation AUCs; rotation alone when no
/// translation errors are supplied.
pub fn auc30(rot_errors: &[f64], trans_errors: Option<&[f64]>, step: f64) -> Result<f64, EvalError> {
    let r = auc_single(rot_errors, step)?;
    match trans_errors {
        Some(t) => Ok(r.min(auc_single(t, step)?)),
        None => Ok(r),
    }
}

/// Per-pair outcome. Failed pairs carry no errors and `valid = false`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub id: String,
    pub rotation_deg: Option<f64>,
    pub translation_deg: Option<f64>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SampleError {
    pub fn failed(id: impl Into<String>, note: impl Into<String>) -> Self {
        Self { id: id.into(), rotation_deg: None, translation_deg: None, valid: false, note: Some(note.into()) }
    }

    /// Scores an estimated relative pose against the ground truth. Without a
    /// ground-truth translation only rotation is scored; a zero-length
    /// translation on either side is noted instead of scored.
    pub fn score(id: impl Into<String>, est: &CameraPose, gt_rotation: &Rotation, gt_translation: Option<&Vec3>) -> Self {
        let rotation_deg = Some(rotation_geodesic_deg(&est.rotation, gt_rotation));
        let (translation_deg, note) = match gt_translation.map(|t| translation_angular_deg(&est.translation, t)) {
            None => (None, None),
            Some(Ok(e)) => (Some(e), None),
            Some(Err(GeometryError::ZeroTranslation)) => (None, Some("zero translation: not scored".to_string())),
            Some(Err(e)) => (None, Some(e.to_string())),
        };
        Self { id: id.into(), rotation_deg, translation_deg, valid: true, note }
    }
}

/// Means over valid samples: rotation, and translation where present.
pub fn mean_errors(samples: &[SampleError]) -> Result<(f64, Option<f64>), EvalError> {
    let rot: Vec<f64> = samples.iter().filter(|s| s.valid).filter_map(|s| s.rotation_deg).collect();
    if rot.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let trans: Vec<f64> = samples.iter().filter(|s| s.valid).filter_map(|s| s.translation_deg).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&rot), (!trans.is_empty()).then(|| mean(&trans))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mre: Option<f64>,
    pub mte: Option<f64>,
    #[serde(rename = "R@5")]
    pub r5: Option<f64>,
    #[serde(rename = "R@15")]
    pub r15: Option<f64>,
    #[serde(rename = "R@30")]
    pub r30: Option<f64>,
    #[serde(rename = "T@5")]
    pub t5: Option<f64>,
    #[serde(rename = "T@15")]
    pub t15: Option<f64>,
    #[serde(rename = "T@30")]
    pub t30: Option<f64>,
    pub auc30: Option<f64>,
    /// Valid, scored samples.
    pub samples: usize,
    pub failures: usize,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Aggregates samples. With no valid samples every metric is absent.
    pub fn build(samples: &[SampleError], config_fingerprint: &str, auc_step: f64) -> Result<Self, EvalError> {
        let failures = samples.iter().filter(|s| !s.valid).count();
        let rot: Vec<f64> = samples.iter().filter(|s| s.valid).filter_map(|s| s.rotation_deg).collect();
        let trans: Vec<f64> = samples.iter().filter(|s| s.valid).filter_map(|s| s.translation_deg).collect();
        let mut report = EvalReport {
            mre: None,
            mte: None,
            r5: None,
            r15: None,
            r30: None,
            t5: None,
            t15: None,
            t30: None,
            auc30: None,
            samples: rot.len(),
            failures,
            config_fingerprint: config_fingerprint.to_string(),
        };
        if rot.is_empty() {
            return Ok(report);
        }
        let (mre, mte) = mean_errors(samples)?;
        report.mre = Some(mre);
        report.mte = mte;
        let [a, b, c] = RECALL_THRESHOLDS;
        report.r5 = Some(recall_at(&rot, a)?);
        report.r15 = Some(recall_at(&rot, b)?);
        report.r30 = Some(recall_at(&rot, c)?);
        if !trans.is_empty() {
            report.t5 = Some(recall_at(&trans, a)?);
            report.t15 = Some(recall_at(&trans, b)?);
            report.t30 = Some(recall_at(&trans, c)?);
        }
        report.auc30 = Some(auc30(&rot, (!trans.is_empty()).then_some(&trans[..]), auc_step)?);
        debug_assert!(report.invariants_hold());
        Ok(report)
    }

    /// Recalls in `[0, 100]` and non-decreasing; AUC within `[0, R@30]`.
    pub fn invariants_hold(&self) -> bool {
        let in_range = |v: Option<f64>| v.is_none_or(|x| (0.0..=100.0).contains(&x));
        let monotone = |a: Option<f64>, b: Option<f64>, c: Option<f64>| match (a, b, c) {
            (Some(a), Some(b), Some(c)) => a <= b && b <= c,
            (None, None, None) => true,
            _ => false,
        };
        [self.r5, self.r15, self.r30, self.t5, self.t15, self.t30, self.auc30].into_iter().all(in_range)
            && monotone(self.r5, self.r15, self.r30)
            && monotone(self.t5, self.t15, self.t30)
            && match (self.auc30, self.r30) {
                (Some(a), Some(r)) => a <= r + 1e-9,
                (None, _) => true,
                _ => false,
            }
    }

    /// Fixed-width table: one header line and one row labelled `label`.
    pub fn to_text(&self, label: &str) -> String {
        let mut out = String::new();
        Self::text_header(&mut out);
        self.text_row(&mut out, label);
        out
    }

    pub fn text_header(out: &mut String) {
        let _ = writeln!(
            out,
            "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>5} {:>5}",
            "method", "MRE", "R@5", "R@15", "R@30", "MTE", "T@5", "T@15", "T@30", "AUC30", "N", "fail"
        );
    }

    pub fn text_row(&self, out: &mut String, label: &str) {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let _ = writeln!(
            out,
            "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>5} {:>5}",
            label,
            f(self.mre),
            f(self.r5),
            f(self.r15),
            f(self.r30),
            f(self.mte),
            f(self.t5),
            f(self.t15),
            f(self.t30),
            f(self.auc30),
            self.samples,
            self.failures
        );
    }
}

/// Per-sample CSV with a header row.
pub fn samples_csv(samples: &[SampleError]) -> String {
    let mut out = String::from("id,rotation_deg,translation_deg,valid\n");
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for s in samples {
        let id = if s.id.contains([',', '"', '\n']) { format!("\"{}\"", s.id.replace('"', "\"\"")) } else { s.id.clone() };
        let _ = writeln!(out, "{},{},{},{}", id, f(s.rotation_deg), f(s.translation_deg), s.valid);
    }
    out
}

/// One pair to evaluate, as stored in a JSON Lines manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub start_path: String,
    pub end_path: String,
    pub gt_rotation_quat_start: Rotation,
    pub gt_rotation_quat_end: Rotation,
    pub gt_translation_start: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_translation_end: Option<[f64; 3]>,
    pub dataset_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_deg: Option<f64>,
}

impl PairRecord {
    /// Ground-truth start-to-end rotation and, when both translations are
    /// known, translation.
    pub fn ground_truth(&self) -> (Rotation, Option<Vec3>) {
        let ts = Vec3::from(self.gt_translation_start);
        let start = CameraPose::new(self.gt_rotation_quat_start, ts);
        match self.gt_translation_end {
            Some(te) => {
                let rel = relative_pose(&start, &CameraPose::new(self.gt_rotation_quat_end, Vec3::from(te)));
                (rel.rotation, Some(rel.translation))
            }
            None => (self.gt_rotation_quat_end * self.gt_rotation_quat_start.inverse(), None),
        }
    }
}

/// A posed image available for pairing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub path: String,
    /// World-to-camera rotation.
    pub rotation: Rotation,
    pub translation: [f64; 3],
}

/// Relative yaw between two world-to-camera rotations, measured on the camera
/// orientations about the world vertical.
pub fn pair_yaw_deg(a: &Rotation, b: &Rotation) -> f64 {
    relative_yaw_deg(&a.inverse(), &b.inverse())
}

/// All catalog pairs `(i, j)`, `i < j`, with yaw in `[lo, hi)`, subsampled
/// uniformly to at most `max_pairs` with a seeded generator, in
/// enumeration order.
pub fn sample_pairs(
    catalog: &[CatalogEntry],
    yaw_lo: f64,
    yaw_hi: f64,
    max_pairs: usize,
    seed: u64,
    dataset_tag: &str,
) -> Result<Vec<PairRecord>, EvalError> {
    let mut all = Vec::new();
    for i in 0..catalog.len() {
        for j in i + 1..catalog.len() {
            let yaw = pair_yaw_deg(&catalog[i].rotation, &catalog[j].rotation);
            if yaw >= yaw_lo && yaw < yaw_hi {
                all.push((i, j, yaw));
            }
        }
    }
    if all.is_empty() {
        return Err(EvalError::NoPairsInRange { lo: yaw_lo, hi: yaw_hi });
    }
    if all.len() > max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep: Vec<usize> = index::sample(&mut rng, all.len(), max_pairs).into_vec();
        keep.sort_unstable();
        all = keep.into_iter().map(|k| all[k]).collect();
    }
    Ok(all
        .into_iter()
        .map(|(i, j, yaw)| {
            let (a, b) = (&catalog[i], &catalog[j]);
            PairRecord {
                id: format!("{}__{}", a.id, b.id),
                start_path: a.path.clone(),
                end_path: b.path.clone(),
                gt_rotation_quat_start: a.rotation,
                gt_rotation_quat_end: b.rotation,
                gt_translation_start: a.translation,
                gt_translation_end: Some(b.translation),
                dataset_tag: dataset_tag.to_string(),
                yaw_deg: Some(yaw),
            }
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Right-limit recall curve integrated on a 0.01° midpoint grid.
    pub(crate) fn fine_grid_auc(errors: &[f64]) -> f64 {
        let steps = 3000;
        let h = AUC_MAX_DEG / steps as f64;
        let n = errors.len() as f64;
        let mut area = 0.0;
        for k in 0..steps {
            let theta = (k as f64 + 0.5) * h;
            area += 100.0 * errors.iter().filter(|e| **e < theta).count() as f64 / n * h;
        }
        area / AUC_MAX_DEG
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at(&[1.0, 2.0, 3.0], 5.0).unwrap(), 100.0);
        assert!((recall_at(&[10.0, 20.0, 40.0], 15.0).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at(&[5.0], 5.0).unwrap(), 0.0);
        assert_eq!(recall_at(&[], 5.0), Err(EvalError::EmptySet));
        // 159 of 288 below threshold formats as 55.21
        let errs: Vec<f64> = (0..288).map(|i| if i < 159 { 1.0 } else { 50.0 }).collect();
        assert_eq!(format!("{:.2}", recall_at(&errs, 5.0).unwrap()), "55.21");
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc30(&[0.0; 10], None, 1.0).unwrap(), 100.0);
        assert_eq!(auc30(&[30.0, 45.0, 90.0], None, 1.0).unwrap(), 0.0);
        assert_eq!(auc30(&[], None, 1.0), Err(EvalError::EmptySet));
        assert!(matches!(auc30(&[1.0], None, 0.7), Err(EvalError::BadStep(_))));
    }

    #[test]
    fn single_sample_auc_against_fine_grid() {
        let oracle = fine_grid_auc(&[15.0]);
        assert!((oracle - 50.0).abs() < 1e-9);
        // a 1° grid places a lone sample's step anywhere inside one bin, so
        // it can miss by up to half a bin (100 / 30 / 2 ≈ 1.67)
        let coarse = auc30(&[15.0], None, 1.0).unwrap();
        assert!((coarse - oracle).abs() <= 100.0 / 60.0 + 1e-9);
        let fine = auc30(&[15.0], None, 0.1).unwrap();
        assert!((fine - oracle).abs() < 0.5, "{fine} vs {oracle}");
    }

    #[test]
    fn mean_examples() {
        let s = |e: f64| SampleError { id: "x".into(), rotation_deg: Some(e), translation_deg: None, valid: true, note: None };
        assert_eq!(mean_errors(&[s(10.0), s(20.0)]).unwrap(), (15.0, None));
        assert_eq!(mean_errors(&[s(7.3)]).unwrap(), (7.3, None));
        assert_eq!(mean_errors(&[SampleError::failed("f", "x")]), Err(EvalError::EmptySet));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..288).map(|_| rng.random_range(0.0..90.0)).collect();
        let samples: Vec<SampleError> = v.iter().map(|e| s(*e)).collect();
        let mut oracle = 0.0;
        for e in v.iter().rev() {
            oracle += e;
        }
        assert!((mean_errors(&samples).unwrap().0 - oracle / 288.0).abs() < 1e-9);
    }

    #[test]
    fn report_counts_failures_and_formats() {
        let ok = SampleError { id: "a".into(), rotation_deg: Some(2.0), translation_deg: Some(12.0), valid: true, note: None };
        let samples = vec![ok, SampleError::failed("b", "stage failed")];
        let r = EvalReport::build(&samples, "abc", 1.0).unwrap();
        assert_eq!((r.samples, r.failures), (1, 1));
        assert_eq!(r.r5, Some(100.0));
        assert_eq!(r.t5, Some(0.0));
        assert!(r.invariants_hold());
        let text = r.to_text("ours");
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("ours"));
        assert_eq!(samples_csv(&samples), "id,rotation_deg,translation_deg,valid\na,2,12,true\nb,,,false\n");

        let empty = EvalReport::build(&[], "abc", 1.0).unwrap();
        assert_eq!((empty.samples, empty.mre), (0, None));
    }

    fn yaw_entry(id: &str, yaw: f64) -> CatalogEntry {
        // orientation (camera-to-world) is a pure yaw; the stored rotation is its inverse
        CatalogEntry { id: id.into(), path: format!("{id}.png"), rotation: Rotation::about_z_deg(yaw).inverse(), translation: [0.0, 0.0, 4.0] }
    }

    #[test]
    fn pair_sampling_examples() {
        let cat = vec![yaw_entry("a", 0.0), yaw_entry("b", 57.0), yaw_entry("c", 80.0)];
        let p = sample_pairs(&cat, 50.0, 65.0, 10, 0, "toy").unwrap();
        assert_eq!(p.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["a__b"]);
        let p = sample_pairs(&cat, 65.0, 90.0, 10, 0, "toy").unwrap();
        assert_eq!(p.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["a__c"]);
        assert_eq!(sample_pairs(&cat, 100.0, 120.0, 10, 0, "toy"), Err(EvalError::NoPairsInRange { lo: 100.0, hi: 120.0 }));
    }

    #[test]
    fn pair_sampling_matches_exhaustive_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cat: Vec<CatalogEntry> = (0..100)
            .map(|i| {
                let r = Rotation::from_rotation_vector(&Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.1..3.1)));
                CatalogEntry { id: format!("{i}"), path: String::new(), rotation: r, translation: [0.0; 3] }
            })
            .collect();
        let got = sample_pairs(&cat, 50.0, 90.0, usize::MAX, 0, "x").unwrap();
        let mut oracle = Vec::new();
        for i in 0..100 {
            for j in i + 1..100 {
                let m = (cat[j].rotation.inverse() * cat[i].rotation).to_matrix();
                let yaw = m[(1, 0)].atan2(m[(0, 0)]).to_degrees().abs();
                if (50.0..90.0).contains(&yaw) {
                    oracle.push(format!("{i}__{j}"));
                }
            }
        }
        assert_eq!(got.iter().map(|r| r.id.clone()).collect::<Vec<_>>(), oracle);
        let sub = sample_pairs(&cat, 50.0, 90.0, 25, 4, "x").unwrap();
        assert_eq!(sub.len(), 25);
        assert_eq!(sub, sample_pairs(&cat, 50.0, 90.0, 25, 4, "x").unwrap());
        for r in &sub {
            let y = pair_yaw_deg(&r.gt_rotation_quat_start, &r.gt_rotation_quat_end);
            assert!((50.0..90.0).contains(&y));
        }
    }

    #[test]
    fn ground_truth_without_end_translation_is_rotation_only() {
        let rec = PairRecord {
            id: "p".into(),
            start_path: "a".into(),
            end_path: "b".into(),
            gt_rotation_quat_start: Rotation::about_z_deg(10.0),
            gt_rotation_quat_end: Rotation::about_z_deg(70.0),
            gt_translation_start: [0.0, 0.0, 4.0],
            gt_translation_end: None,
            dataset_tag: "t".into(),
            yaw_deg: None,
        };
        let (r, t) = rec.ground_truth();
        assert!((rotation_geodesic_deg(&r, &Rotation::about_z_deg(60.0))).abs() < 1e-10);
        assert!(t.is_none());
    }

    proptest! {
        #[test]
        fn recall_is_monotone(errs in proptest::collection::vec(0.0f64..180.0, 1..60), a in 0.0f64..90.0, d in 0.0f64..90.0) {
            prop_assert!(recall_at(&errs, a).unwrap() <= recall_at(&errs, a + d).unwrap());
            prop_assert_eq!(recall_at(&errs, 180.0 + 1e-9).unwrap(), 100.0);
        }

        #[test]
        fn auc_bounds_and_min_rule(r in proptest::collection::vec(0.0f64..60.0, 1..50), t in proptest::collection::vec(0.0f64..60.0, 1..50)) {
            let a = auc30(&r, Some(&t), 1.0).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!(a <= auc_single(&r, 1.0).unwrap() && a <= auc_single(&t, 1.0).unwrap());
            prop_assert!(auc_single(&r, 1.0).unwrap() <= recall_at(&r, 30.0).unwrap() + 1e-9);
        }
    }
}
