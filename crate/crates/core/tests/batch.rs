use std::fs;

use posecraft_core::backends::{Backends, PairSuiteConfig, SyntheticSuite};
use posecraft_core::pipeline::{parse_manifest, run_batch, Mode, PipelineConfig, Stage};

#[test]
fn unreadable_image_is_counted_not_scored() {
    let suite = SyntheticSuite::pairs(&PairSuiteConfig { pairs: 5, seed: 21, ..Default::default() });
    let (be, frames) = suite.backend(0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    suite.write(dir.path(), &frames, "synthetic").unwrap();
    fs::write(dir.path().join("s002_b.png"), b"not a png").unwrap();
    let manifest = parse_manifest(&fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap()).unwrap();
    let cfg = PipelineConfig { mode: Mode::PairOnly, workers: Some(2), ..Default::default() };
    let out = run_batch(&manifest, dir.path(), &cfg, &Backends::uniform(&be)).unwrap();
    assert_eq!((out.report.samples, out.report.failures), (4, 1));
    let ids: Vec<&str> = out.results.iter().map(|r| r.id.as_deref().unwrap()).collect();
    let expected: Vec<&str> = manifest.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, expected);
    let failed = &out.results[2];
    assert_eq!(failed.failure.as_ref().unwrap().stage, Stage::Load);
    assert!(failed.failure.as_ref().unwrap().cause.contains("s002_b.png"));
    assert!(failed.relative_pose.is_none());
    assert!(out.report.mre.unwrap() < 1e-6);
}

#[test]
fn no_fms_frame_sets_contain_full_selections() {
    let suite = SyntheticSuite::pairs(&PairSuiteConfig { pairs: 2, seed: 9, ..Default::default() });
    let (be, frames) = suite.backend(0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    suite.write(dir.path(), &frames, "synthetic").unwrap();
    let manifest = suite.manifest("synthetic");
    let backends = Backends::uniform(&be);
    let full = run_batch(&manifest, dir.path(), &PipelineConfig::default(), &backends).unwrap();
    let nofms = run_batch(&manifest, dir.path(), &PipelineConfig { mode: Mode::NoFms, ..Default::default() }, &backends).unwrap();
    for (f, n) in full.results.iter().zip(&nofms.results) {
        assert!(!f.selected.is_empty());
        assert!(f.selected.iter().all(|t| n.selected.contains(t)));
    }
    assert!(full.report.mre.unwrap() < 1.0);
    assert_ne!(full.report.config_fingerprint, nofms.report.config_fingerprint);
}
