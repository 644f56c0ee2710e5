use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use posecraft_core::backends::suite::jsonl;
use posecraft_core::backends::{
    Backends, HttpBackend, HttpConfig, PairSuiteConfig, SceneConfig, SyntheticBackend, SyntheticSuite,
};
use posecraft_core::eval::{sample_pairs as draw_pairs, samples_csv, CatalogEntry, EvalReport, PairRecord};
use posecraft_core::pipeline::{open_image, parse_manifest, run_batch, run_pair, BatchOutput, Mode, PipelineConfig, Stage};
use serde::Serialize;

use crate::config::{resolve, BackendArgs, BackendKind, PipelineArgs, Resolved};
use crate::server;

/// Exit 2 for usage or input problems, 1 when the pipeline itself fails.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Pipeline { error: anyhow::Error, stage: Option<Stage> },
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Pipeline { .. } => 1,
        }
    }

    /// One JSON line for stderr.
    pub fn diagnostic(&self) -> String {
        let (kind, error, stage) = match self {
            Failure::Usage(e) => ("usage", e, None),
            Failure::Pipeline { error, stage } => ("pipeline", error, *stage),
        };
        let mut v = serde_json::json!({ "kind": kind, "error": format!("{error:#}") });
        if let Some(s) = stage {
            v["stage"] = serde_json::json!(s.name());
        }
        v.to_string()
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn pipeline_failure(error: impl Into<anyhow::Error>) -> Failure {
    Failure::Pipeline { error: error.into(), stage: None }
}

type CmdResult = Result<(), Failure>;

enum Engine {
    Synthetic(SyntheticBackend),
    Http(HttpBackend),
}

impl Engine {
    /// The synthetic backend needs the suite spec that produced the inputs;
    /// it defaults to `suite.json` in `input_dir`.
    fn build(r: &Resolved, input_dir: &Path) -> anyhow::Result<Self> {
        match r.backend {
            BackendKind::Http => Ok(Engine::Http(HttpBackend::new(r.http.clone()))),
            BackendKind::Synthetic => {
                let path = r.suite.clone().unwrap_or_else(|| input_dir.join("suite.json"));
                let suite = SyntheticSuite::load(&path)
                    .with_context(|| format!("synthetic backend needs a suite spec; cannot load {}", path.display()))?;
                let (be, _) = suite.backend(r.jitter_deg).map_err(|e| anyhow!("{}: {e}", path.display()))?;
                Ok(Engine::Synthetic(be))
            }
        }
    }

    fn backends(&self) -> Backends<'_> {
        match self {
            Engine::Synthetic(b) => Backends::uniform(b),
            Engine::Http(b) => Backends::uniform(b),
        }
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("outputs serialise") + "\n"
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display())).map_err(Failure::Usage)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(Failure::Usage)
}

pub fn run(
    cfg: Option<&Path>,
    start: &Path,
    end: &Path,
    out: Option<&Path>,
    dump_frames: bool,
    b: &BackendArgs,
    p: &PipelineArgs,
) -> CmdResult {
    let r = resolve(cfg, b, p)?;
    let (a, z) = (open_image(start).map_err(|e| Failure::Usage(e.into()))?, open_image(end).map_err(|e| Failure::Usage(e.into()))?);
    let engine = Engine::build(&r, &parent_dir(start))?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
    }
    match run_pair(&a, &z, &r.pipeline, &engine.backends()) {
        Ok(run) => {
            let json = pretty(&run.result);
            print!("{json}");
            if let Some(dir) = out {
                write_file(&dir.join("result.json"), &json)?;
                write_file(&dir.join("timings.json"), pretty(&run.timings))?;
                if dump_frames {
                    let frames = dir.join("frames");
                    ensure_dir(&frames)?;
                    for (i, f) in run.frames.interpolated.iter().enumerate() {
                        write_file(&frames.join(format!("dc_{i:02}.png")), f.to_png())?;
                    }
                    for (i, f) in run.frames.refined.iter().enumerate() {
                        write_file(&frames.join(format!("vc_{i:02}.png")), f.to_png())?;
                    }
                }
            }
            Ok(())
        }
        Err(f) => {
            let stage = f.stage;
            let error = anyhow!(f.to_string());
            if let Some(dir) = out {
                write_file(&dir.join("result.json"), pretty(&f.into_result()))?;
            }
            Err(Failure::Pipeline { error, stage: Some(stage) })
        }
    }
}

fn read_manifest(path: &Path) -> Result<Vec<PairRecord>, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
    parse_manifest(&text).with_context(|| format!("manifest {}", path.display())).map_err(Failure::Usage)
}

fn batch(pipeline: &PipelineConfig, manifest: &[PairRecord], base: &Path, engine: Option<&Engine>) -> Result<BatchOutput, Failure> {
    let idle = HttpBackend::new(HttpConfig::default());
    let backends = engine.map_or_else(|| Backends::uniform(&idle), Engine::backends);
    run_batch(manifest, base, pipeline, &backends).map_err(pipeline_failure)
}

/// Engine only when there is work; an empty manifest needs no backend.
fn engine_for(r: &Resolved, manifest_len: usize, base: &Path) -> Result<Option<Engine>, Failure> {
    if manifest_len == 0 {
        return Ok(None);
    }
    Ok(Some(Engine::build(r, base)?))
}

fn all_failed(report: &EvalReport) -> bool {
    report.samples == 0 && report.failures > 0
}

pub fn eval(
    cfg: Option<&Path>,
    manifest_path: &Path,
    out: Option<&Path>,
    label: Option<&str>,
    b: &BackendArgs,
    p: &PipelineArgs,
) -> CmdResult {
    let r = resolve(cfg, b, p)?;
    let manifest = read_manifest(manifest_path)?;
    let base = parent_dir(manifest_path);
    let engine = engine_for(&r, manifest.len(), &base)?;
    let output = batch(&r.pipeline, &manifest, &base, engine.as_ref())?;
    let label = label.map_or_else(|| r.pipeline.mode.label(), str::to_string);
    let text = output.report.to_text(&label);
    print!("{text}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join("report.json"), pretty(&output.report))?;
        write_file(&dir.join("report.txt"), &text)?;
        write_file(&dir.join("samples.csv"), samples_csv(&output.samples))?;
        write_file(&dir.join("results.jsonl"), jsonl(&output.results))?;
        write_file(&dir.join("timings.json"), pretty(&output.timings))?;
    }
    if all_failed(&output.report) {
        return Err(pipeline_failure(anyhow!("all {} pairs failed", output.report.failures)));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Relay,
    K,
    Selector,
}

pub fn parse_axis(s: &str) -> anyhow::Result<SweepAxis> {
    match s {
        "relay" => Ok(SweepAxis::Relay),
        "k" => Ok(SweepAxis::K),
        "selector" => Ok(SweepAxis::Selector),
        _ => Err(anyhow!("UnknownSweepAxis: {s:?} (expected relay, k or selector)")),
    }
}

/// Labelled configurations of one sweep.
pub fn sweep_points(axis: SweepAxis, base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    let with = |mode: Mode| PipelineConfig { mode, ..base.clone() };
    match axis {
        SweepAxis::Relay => {
            [2, 4, 6, 8, 16].into_iter().map(|n| (format!("relay n={n}"), with(Mode::RelayAblation { n }))).collect()
        }
        SweepAxis::K => [4, 6, 8]
            .into_iter()
            .map(|k| {
                let mut c = with(Mode::Full);
                c.selection.k = k;
                (format!("k={k}"), c)
            })
            .collect(),
        SweepAxis::Selector => {
            let mut v = vec![("fms".to_string(), with(Mode::Full))];
            for p in [0.2, 0.4, 0.6, 0.8] {
                v.push((format!("conf {}%", (p * 100.0) as u32), with(Mode::Confidence { percentile: p })));
            }
            v.push(("none".to_string(), with(Mode::NoFms)));
            v
        }
    }
}

#[derive(Serialize)]
struct AblationRow<'a> {
    point: &'a str,
    report: &'a EvalReport,
}

pub fn ablate(
    cfg: Option<&Path>,
    manifest_path: &Path,
    sweep: &str,
    out: Option<&Path>,
    b: &BackendArgs,
    p: &PipelineArgs,
) -> CmdResult {
    let axis = parse_axis(sweep)?;
    let r = resolve(cfg, b, p)?;
    let manifest = read_manifest(manifest_path)?;
    let base = parent_dir(manifest_path);
    let engine = engine_for(&r, manifest.len(), &base)?;
    let points = sweep_points(axis, &r.pipeline);
    let mut reports = Vec::with_capacity(points.len());
    for (label, c) in &points {
        log::info!("sweep point {label}");
        reports.push(batch(c, &manifest, &base, engine.as_ref())?.report);
    }
    let mut text = String::new();
    EvalReport::text_header(&mut text);
    for ((label, _), rep) in points.iter().zip(&reports) {
        rep.text_row(&mut text, label);
    }
    print!("{text}");
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let rows: Vec<AblationRow> = points.iter().zip(&reports).map(|((l, _), report)| AblationRow { point: l, report }).collect();
        write_file(&dir.join("ablation.json"), pretty(&rows))?;
        write_file(&dir.join("ablation.txt"), &text)?;
    }
    Ok(())
}

pub fn sample_pairs(catalog: &Path, lo: f64, hi: f64, max_pairs: usize, seed: u64, tag: &str, out: Option<&Path>) -> CmdResult {
    let text = fs::read_to_string(catalog).with_context(|| format!("cannot read catalog {}", catalog.display()))?;
    let entries: Vec<CatalogEntry> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("catalog line {}", i + 1)))
        .collect::<anyhow::Result<_>>()?;
    let pairs = draw_pairs(&entries, lo, hi, max_pairs, seed, tag).map_err(|e| Failure::Usage(e.into()))?;
    let body = jsonl(&pairs);
    match out {
        Some(path) => write_file(path, body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

pub fn synth_suite(dir: &Path, pairs: usize, seed: u64, yaw_lo: f64, yaw_hi: f64, noise_sigma: f64, small: bool) -> CmdResult {
    let base = if small { SceneConfig::small(0) } else { SceneConfig::default() };
    let cfg = PairSuiteConfig { pairs, seed, yaw_lo, yaw_hi, scene: SceneConfig { noise_sigma, ..base }, ..Default::default() };
    let suite = SyntheticSuite::pairs(&cfg);
    let (_, frames) = suite.backend(0.0).map_err(|e| Failure::Usage(e.into()))?;
    suite.write(dir, &frames, "synthetic").with_context(|| format!("cannot write suite to {}", dir.display()))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "{} views, {} pairs written to {}", suite.views.len(), suite.pairs.len(), dir.display());
    print!("{summary}");
    Ok(())
}

/// The one-pair 64×40 suite served when no spec is given.
pub fn fixture_suite() -> SyntheticSuite {
    SyntheticSuite::pairs(&PairSuiteConfig { pairs: 1, seed: 0, scene: SceneConfig::small(0), ..Default::default() })
}

pub fn serve_mock(suite: Option<&Path>, jitter_deg: f64, host: &str, port: u16) -> CmdResult {
    let suite = match suite {
        Some(p) => SyntheticSuite::load(p).with_context(|| format!("cannot load suite {}", p.display()))?,
        None => fixture_suite(),
    };
    let (be, _) = suite.backend(jitter_deg).map_err(|e| Failure::Usage(e.into()))?;
    let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad listen address {host}:{port}"))?;
    server::serve(be, addr, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    })
    .map_err(pipeline_failure)
}
