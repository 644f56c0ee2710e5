//! Pair-level orchestration: interpolation, relay poses, trajectory, view
//! synthesis, frame selection and the final pose call; plus batch runs over
//! a manifest.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use image::DynamicImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::validate::{check_interpolate, check_nvs, check_pose};
use crate::backends::{encode_image, BackendError, Backends, InterpolateRequest, NvsRequest, PoseRequest, RelayFrame};
use crate::eval::{EvalError, EvalReport, PairRecord, SampleError};
use crate::features::{preprocess, FeatureError, Frame, Matcher, OrbConfig, OrbMatcher};
use crate::geometry::{interpolate_trajectory, relative_pose, CameraPose, GeometryError};
use crate::robust::{RansacConfig, RobustError};
use crate::selector::{fms_score_all, relay_indices, select_by_confidence, select_top_k, FrameScore, SelectionConfig, SelectorError};

/// How the final pose-estimation frame set is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    /// Top-k frames by feature-matching score, plus the pair.
    Full,
    /// The raw pair only; nothing is generated.
    PairOnly,
    /// Every refined frame plus the pair.
    NoFms,
    /// Full mode with a different relay pattern size.
    RelayAblation { n: usize },
    /// Refined frames in the top `percentile` of pose confidence, plus the pair.
    Confidence { percentile: f64 },
}

impl Mode {
    pub fn label(&self) -> String {
        match self {
            Mode::Full => "full".into(),
            Mode::PairOnly => "pair_only".into(),
            Mode::NoFms => "no_fms".into(),
            Mode::RelayAblation { n } => format!("relay_{n}"),
            Mode::Confidence { percentile } => format!("conf_{}", (percentile * 100.0).round()),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dc_frame_count: usize,
    pub vc_frame_count: usize,
    pub selection: SelectionConfig,
    pub ransac: RansacConfig,
    pub orb: OrbConfig,
    pub target_width: u32,
    pub target_height: u32,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Pairs processed concurrently in a batch; `None` uses every core.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Sampling step of the AUC, degrees.
    pub auc_step: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dc_frame_count: crate::backends::DEFAULT_INTERPOLATE_FRAMES,
            vc_frame_count: crate::backends::DEFAULT_TRAJECTORY_LEN,
            selection: SelectionConfig::default(),
            ransac: RansacConfig::default(),
            orb: OrbConfig::default(),
            target_width: 512,
            target_height: 320,
            mode: Mode::Full,
            prompt: None,
            workers: None,
            auc_step: 1.0,
        }
    }
}

impl PipelineConfig {
    /// Relay pattern size after the mode override.
    pub fn relay_frames(&self) -> usize {
        match self.mode {
            Mode::RelayAblation { n } => n,
            _ => self.selection.relay_frames,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        let n = self.relay_frames();
        relay_indices(self.dc_frame_count, n).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        if self.vc_frame_count < n {
            return bad(format!("vc_frame_count {} below relay pattern size {n}", self.vc_frame_count));
        }
        if self.target_width == 0 || self.target_height == 0 {
            return bad("target size must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if let Mode::Confidence { percentile } = self.mode {
            if !(percentile > 0.0 && percentile <= 1.0) {
                return bad(format!("percentile {percentile} outside (0, 1]"));
            }
        }
        self.ransac.validate().map_err(PipelineError::Robust)?;
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, with
    /// execution-only fields (worker count) cleared.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Trajectory position of each relay: its interpolated-frame index scaled
    /// proportionally onto the refined sequence.
    pub fn trajectory_keys(&self, relays: &[usize]) -> Vec<usize> {
        let (d, v) = ((self.dc_frame_count - 1) as f64, (self.vc_frame_count - 1) as f64);
        relays.iter().map(|&i| (i as f64 * v / d).round() as usize).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Preprocess,
    Interpolate,
    RelaySelect,
    RelayPose,
    Trajectory,
    Synthesize,
    Select,
    FinalPose,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Interpolate => "interpolate",
            Stage::RelaySelect => "relay_select",
            Stage::RelayPose => "relay_pose",
            Stage::Trajectory => "trajectory",
            Stage::Synthesize => "synthesize",
            Stage::Select => "select",
            Stage::FinalPose => "final_pose",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Robust(RobustError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cannot read {path}: {message}")]
    Input { path: String, message: String },
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// A stage failed; `partial` holds everything computed before it.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("stage {stage} failed: {source}")]
pub struct StageFailure {
    pub stage: Stage,
    pub source: PipelineError,
    pub partial: Box<PipelineResult>,
}

impl StageFailure {
    /// The partial result with the failure recorded on it.
    pub fn into_result(self) -> PipelineResult {
        let mut r = *self.partial;
        r.failure = Some(FailureInfo { stage: self.stage, cause: self.source.to_string() });
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: Stage,
    pub cause: String,
}

/// Everything a run decided. Present pose iff no failure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub mode: String,
    /// Start-to-end relative pose; translation has unit length up to the pose backend's scale.
    pub relative_pose: Option<CameraPose>,
    /// Interpolated-frame indices used as relays.
    pub relay_indices: Vec<usize>,
    /// Relay poses in the gauge of the first relay.
    pub relay_poses: Vec<CameraPose>,
    pub trajectory_keys: Vec<usize>,
    pub scores: Vec<FrameScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<f64>>,
    /// Refined-frame indices fed to the final pose call.
    pub selected: Vec<usize>,
    /// Set when selection came back empty and relay frames were used instead.
    pub selection_fallback: bool,
    /// Interpolated-frame indices used by the fallback.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fallback_relays: Vec<usize>,
    /// Images sent to the final pose call, the pair included.
    pub final_frame_count: usize,
    pub generated_frames: usize,
    pub failure: Option<FailureInfo>,
}

/// Wall-clock seconds per stage, kept apart from results so those stay
/// reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings(pub Vec<(Stage, f64)>);

impl StageTimings {
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.0.push((stage, t0.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, s)| s).sum()
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.0.iter().filter(|(s, _)| *s == stage).map(|(_, t)| t).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub struct GeneratedFrames {
    pub interpolated: Vec<Frame>,
    pub refined: Vec<Frame>,
}

#[derive(Clone, Debug)]
pub struct PairRun {
    pub result: PipelineResult,
    pub timings: StageTimings,
    pub frames: GeneratedFrames,
}

struct Run<'c> {
    cfg: &'c PipelineConfig,
    result: PipelineResult,
    timings: StageTimings,
    frames: GeneratedFrames,
}

impl Run<'_> {
    fn fail(&self, stage: Stage, e: impl Into<PipelineError>) -> StageFailure {
        StageFailure { stage, source: e.into(), partial: Box::new(self.result.clone()) }
    }

    fn step<T, E: Into<PipelineError>>(&mut self, stage: Stage, f: impl FnOnce(&Self) -> Result<T, E>) -> Result<T, StageFailure> {
        let t0 = Instant::now();
        let out = f(self);
        self.timings.0.push((stage, t0.elapsed().as_secs_f64()));
        out.map_err(|e| self.fail(stage, e))
    }

    fn pose_call(&self, backends: &Backends, frames: &[&Frame]) -> Result<(Vec<CameraPose>, Vec<f64>), PipelineError> {
        let req = PoseRequest { frames: frames.iter().map(|f| encode_image(f)).collect() };
        let resp = backends.pose.estimate(&req)?;
        check_pose(&req, &resp)?;
        Ok((resp.poses, resp.confidences))
    }
}

/// Runs one pair with the built-in matcher.
pub fn run_pair(start: &DynamicImage, end: &DynamicImage, cfg: &PipelineConfig, backends: &Backends) -> Result<PairRun, StageFailure> {
    run_pair_with(start, end, cfg, backends, &OrbMatcher::new(cfg.orb.clone()))
}

/// Runs one pair. Stages execute strictly in order, each consuming only
/// earlier outputs.
pub fn run_pair_with<M: Matcher>(
    start: &DynamicImage,
    end: &DynamicImage,
    cfg: &PipelineConfig,
    backends: &Backends,
    matcher: &M,
) -> Result<PairRun, StageFailure> {
    let mut run = Run {
        cfg,
        result: PipelineResult { mode: cfg.mode.label(), ..Default::default() },
        timings: StageTimings::default(),
        frames: GeneratedFrames::default(),
    };
    run.step(Stage::Preprocess, |_| cfg.validate())?;
    let (target_w, target_h) = (cfg.target_width, cfg.target_height);
    let (a, b) = run.step(Stage::Preprocess, |_| {
        Ok::<_, FeatureError>((preprocess(start, (target_w, target_h), 0)?, preprocess(end, (target_w, target_h), 1)?))
    })?;

    let selected_frames: Vec<Frame> = match cfg.mode {
        Mode::PairOnly => Vec::new(),
        _ => generate_and_select(&mut run, backends, matcher, &a, &b)?,
    };

    let mut set: Vec<&Frame> = Vec::with_capacity(selected_frames.len() + 2);
    set.push(&a);
    set.extend(selected_frames.iter());
    set.push(&b);
    run.result.final_frame_count = set.len();
    let (poses, _) = run.step(Stage::FinalPose, |r| r.pose_call(backends, &set))?;
    run.result.relative_pose = Some(relative_pose(&poses[0], &poses[poses.len() - 1]));
    Ok(PairRun { result: run.result, timings: run.timings, frames: run.frames })
}

fn generate_and_select<M: Matcher>(
    run: &mut Run,
    backends: &Backends,
    matcher: &M,
    a: &Frame,
    b: &Frame,
) -> Result<Vec<Frame>, StageFailure> {
    let cfg = run.cfg;
    let dc = run.step(Stage::Interpolate, |_| {
        let req = InterpolateRequest { start: encode_image(a), end: encode_image(b), frame_count: cfg.dc_frame_count, prompt: cfg.prompt.clone() };
        let resp = backends.interpolator.interpolate(&req)?;
        check_interpolate(&req, &resp).map_err(PipelineError::from)
    })?;
    run.result.generated_frames += dc.len();

    let relays = run.step(Stage::RelaySelect, |_| relay_indices(cfg.dc_frame_count, cfg.relay_frames()))?;
    run.result.relay_indices = relays.clone();

    let relay_frames: Vec<&Frame> = relays.iter().map(|&i| &dc[i]).collect();
    let relay_images: Vec<String> = relay_frames.iter().map(|f| encode_image(f)).collect();
    let (relay_poses, _) = run.step(Stage::RelayPose, |r| r.pose_call(backends, &relay_frames))?;
    run.result.relay_poses = relay_poses.clone();

    let keys = cfg.trajectory_keys(&relays);
    run.result.trajectory_keys = keys.clone();
    let trajectory = run.step(Stage::Trajectory, |_| {
        let keyed: Vec<(usize, CameraPose)> = keys.iter().copied().zip(relay_poses.iter().copied()).collect();
        interpolate_trajectory(&keyed, cfg.vc_frame_count - 1)
    })?;

    let vc = run.step(Stage::Synthesize, |_| {
        let req = NvsRequest {
            relays: keys
                .iter()
                .zip(relay_images)
                .zip(&relay_poses)
                .map(|((&index, image), pose)| RelayFrame { index, image, pose: *pose })
                .collect(),
            trajectory: trajectory.into_poses(),
        };
        let resp = backends.synthesizer.synthesize(&req)?;
        check_nvs(&req, &resp).map_err(PipelineError::from)
    })?;
    run.result.generated_frames += vc.len();

    let all: Vec<usize> = (0..cfg.vc_frame_count).collect();
    let selected = match cfg.mode {
        Mode::NoFms => all,
        Mode::Confidence { percentile } => {
            let set: Vec<&Frame> = std::iter::once(a).chain(vc.iter()).chain(std::iter::once(b)).collect();
            let (_, conf) = run.step(Stage::Select, |r| r.pose_call(backends, &set))?;
            let refined_conf = conf[1..conf.len() - 1].to_vec();
            run.result.confidences = Some(refined_conf.clone());
            run.step(Stage::Select, |_| select_by_confidence(&all, &refined_conf, percentile))?
        }
        _ => {
            let scores = run.timings.time(Stage::Select, || fms_score_all(&vc, a, b, matcher, &cfg.ransac));
            let picked = select_top_k(&scores, &cfg.selection, cfg.vc_frame_count - 1);
            run.result.scores = scores;
            picked
        }
    };

    if selected.is_empty() {
        let interior: Vec<usize> = relays.iter().copied().filter(|&i| i != 0 && i != cfg.dc_frame_count - 1).collect();
        log::info!("selection empty; falling back to relay frames {interior:?}");
        run.result.selection_fallback = true;
        run.result.fallback_relays = interior.clone();
        let out = interior.iter().map(|&i| dc[i].clone()).collect();
        run.frames = GeneratedFrames { interpolated: dc, refined: vc };
        return Ok(out);
    }
    run.result.selected = selected.clone();
    let out = selected.iter().map(|&i| vc[i].clone()).collect();
    run.frames = GeneratedFrames { interpolated: dc, refined: vc };
    Ok(out)
}

/// Parses a JSON Lines manifest; blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<PairRecord>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::ManifestParse { line: i + 1, message: e.to_string() }))
        .collect()
}

#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub results: Vec<PipelineResult>,
    pub samples: Vec<SampleError>,
    pub report: EvalReport,
    pub timings: Vec<StageTimings>,
}

pub fn open_image(path: &Path) -> Result<DynamicImage, PipelineError> {
    image::open(path).map_err(|e| PipelineError::Input { path: path.display().to_string(), message: e.to_string() })
}

fn load_image(base: &Path, path: &str) -> Result<DynamicImage, PipelineError> {
    open_image(&base.join(path))
}

fn run_record(rec: &PairRecord, base: &Path, cfg: &PipelineConfig, backends: &Backends) -> (PipelineResult, SampleError, StageTimings) {
    let loaded = load_image(base, &rec.start_path).and_then(|a| Ok((a, load_image(base, &rec.end_path)?)));
    let outcome = match loaded {
        Err(e) => Err(StageFailure {
            stage: Stage::Load,
            source: e,
            partial: Box::new(PipelineResult { mode: cfg.mode.label(), ..Default::default() }),
        }),
        Ok((a, b)) => run_pair(&a, &b, cfg, backends),
    };
    let (mut result, timings) = match outcome {
        Ok(run) => (run.result, run.timings),
        Err(f) => {
            log::warn!("{}: {f}", rec.id);
            (f.into_result(), StageTimings::default())
        }
    };
    result.id = Some(rec.id.clone());
    let sample = match (&result.relative_pose, &result.failure) {
        (Some(est), None) => {
            let (gt_r, gt_t) = rec.ground_truth();
            SampleError::score(rec.id.clone(), est, &gt_r, gt_t.as_ref())
        }
        (_, failure) => SampleError::failed(
            rec.id.clone(),
            failure.as_ref().map_or("no pose".to_string(), |f| format!("{}: {}", f.stage, f.cause)),
        ),
    };
    (result, sample, timings)
}

/// Runs every record with bounded parallelism and aggregates the report.
/// Paths resolve against `base`. Results keep manifest order.
pub fn run_batch(manifest: &[PairRecord], base: &Path, cfg: &PipelineConfig, backends: &Backends) -> Result<BatchOutput, PipelineError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let rows: Vec<(PipelineResult, SampleError, StageTimings)> =
        pool.install(|| manifest.par_iter().map(|rec| run_record(rec, base, cfg, backends)).collect());
    let mut results = Vec::with_capacity(rows.len());
    let mut samples = Vec::with_capacity(rows.len());
    let mut timings = Vec::with_capacity(rows.len());
    for (r, s, t) in rows {
        results.push(r);
        samples.push(s);
        timings.push(t);
    }
    let report = EvalReport::build(&samples, &cfg.fingerprint(), cfg.auc_step)?;
    Ok(BatchOutput { results, samples, report, timings })
}

/// Frame as the pipeline would see it after loading, for callers that
/// already hold decoded frames.
pub fn frame_to_image(frame: &Frame) -> DynamicImage {
    image::load_from_memory(&frame.to_png()).expect("frames re-decode")
}
