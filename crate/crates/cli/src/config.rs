//! Layered configuration: built-in defaults, then a TOML or JSON file, then
//! environment variables and flags (clap resolves those two, flag first).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use posecraft_core::backends::HttpConfig;
use posecraft_core::pipeline::{Mode, PipelineConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Http,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<BackendKind>,
    /// `suite.json` describing the synthetic scenes.
    pub suite: Option<PathBuf>,
    pub jitter_deg: Option<f64>,
    pub pipeline: PipelineConfig,
    pub http: HttpConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        };
        Ok(cfg)
    }
}

/// `full`, `pair_only`, `no_fms`, `relay:N` or `conf:P` with `P` in `(0, 1]`.
pub fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "full" => Ok(Mode::Full),
        "pair_only" => Ok(Mode::PairOnly),
        "no_fms" => Ok(Mode::NoFms),
        _ => {
            if let Some(n) = s.strip_prefix("relay:") {
                return n.parse().map(|n| Mode::RelayAblation { n }).map_err(|e| format!("relay size: {e}"));
            }
            if let Some(p) = s.strip_prefix("conf:") {
                return p.parse().map(|percentile| Mode::Confidence { percentile }).map_err(|e| format!("percentile: {e}"));
            }
            Err(format!("unknown mode {s:?}; expected full, pair_only, no_fms, relay:N or conf:P"))
        }
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct BackendArgs {
    #[arg(long, env = "POSECRAFT_BACKEND", value_enum)]
    pub backend: Option<BackendKind>,
    /// Synthetic suite spec; defaults to `suite.json` beside the inputs.
    #[arg(long, env = "POSECRAFT_SUITE")]
    pub suite: Option<PathBuf>,
    /// Rotation noise of the synthetic pose role, degrees.
    #[arg(long, env = "POSECRAFT_JITTER_DEG")]
    pub jitter_deg: Option<f64>,
    #[arg(long, env = "POSECRAFT_INTERPOLATE_URL")]
    pub interpolate_url: Option<String>,
    #[arg(long, env = "POSECRAFT_NVS_URL")]
    pub nvs_url: Option<String>,
    #[arg(long, env = "POSECRAFT_POSE_URL")]
    pub pose_url: Option<String>,
    #[arg(long, env = "POSECRAFT_TIMEOUT_SECS")]
    pub timeout_secs: Option<f64>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct PipelineArgs {
    #[arg(long, env = "POSECRAFT_MODE", value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, env = "POSECRAFT_K")]
    pub k: Option<usize>,
    #[arg(long, env = "POSECRAFT_RELAY_FRAMES")]
    pub relay_frames: Option<usize>,
    #[arg(long, env = "POSECRAFT_SCORE_THRESHOLD")]
    pub score_threshold: Option<usize>,
    /// RANSAC seed.
    #[arg(long, env = "POSECRAFT_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "POSECRAFT_WORKERS")]
    pub workers: Option<usize>,
}

/// Everything a pipeline command needs after layering.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub backend: BackendKind,
    pub suite: Option<PathBuf>,
    pub jitter_deg: f64,
    pub pipeline: PipelineConfig,
    pub http: HttpConfig,
}

pub fn resolve(file: Option<&Path>, b: &BackendArgs, p: &PipelineArgs) -> anyhow::Result<Resolved> {
    let base = match file {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut pipeline = base.pipeline;
    if let Some(m) = p.mode {
        pipeline.mode = m;
    }
    if let Some(k) = p.k {
        pipeline.selection.k = k;
    }
    if let Some(n) = p.relay_frames {
        pipeline.selection.relay_frames = n;
    }
    if let Some(t) = p.score_threshold {
        pipeline.selection.score_threshold = t;
    }
    if let Some(s) = p.seed {
        pipeline.ransac.seed = s;
    }
    if p.workers.is_some() {
        pipeline.workers = p.workers;
    }
    pipeline.validate()?;

    let mut http = base.http;
    for (dst, src) in [
        (&mut http.interpolate_url, &b.interpolate_url),
        (&mut http.nvs_url, &b.nvs_url),
        (&mut http.pose_url, &b.pose_url),
    ] {
        if src.is_some() {
            dst.clone_from(src);
        }
    }
    if let Some(t) = b.timeout_secs {
        http.timeout_secs = t;
    }
    let jitter_deg = b.jitter_deg.or(base.jitter_deg).unwrap_or(0.0);
    if !(jitter_deg >= 0.0 && jitter_deg.is_finite()) {
        bail!("jitter must be a non-negative number of degrees, got {jitter_deg}");
    }
    Ok(Resolved {
        backend: b.backend.or(base.backend).unwrap_or_default(),
        suite: b.suite.clone().or(base.suite),
        jitter_deg,
        pipeline,
        http,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse() {
        assert_eq!(parse_mode("no_fms"), Ok(Mode::NoFms));
        assert_eq!(parse_mode("relay:8"), Ok(Mode::RelayAblation { n: 8 }));
        assert_eq!(parse_mode("conf:0.4"), Ok(Mode::Confidence { percentile: 0.4 }));
        assert!(parse_mode("fast").is_err());
    }

    #[test]
    fn flags_beat_file_and_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "backend = \"http\"\njitter_deg = 2.0\n[pipeline.selection]\nk = 4\n[http]\npose_url = \"http://file\"\n",
        )
        .unwrap();
        let r = resolve(Some(&path), &BackendArgs::default(), &PipelineArgs::default()).unwrap();
        assert_eq!((r.backend, r.pipeline.selection.k, r.jitter_deg), (BackendKind::Http, 4, 2.0));
        assert_eq!(r.http.pose_url.as_deref(), Some("http://file"));
        assert_eq!(r.pipeline.dc_frame_count, 16);

        let b = BackendArgs { pose_url: Some("http://flag".into()), ..Default::default() };
        let p = PipelineArgs { k: Some(8), ..Default::default() };
        let r = resolve(Some(&path), &b, &p).unwrap();
        assert_eq!(r.pipeline.selection.k, 8);
        assert_eq!(r.http.pose_url.as_deref(), Some("http://flag"));
    }

    #[test]
    fn json_configs_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"pipeline": {"mode": {"kind": "pair_only"}}}"#).unwrap();
        let r = resolve(Some(&path), &BackendArgs::default(), &PipelineArgs::default()).unwrap();
        assert_eq!(r.pipeline.mode, Mode::PairOnly);
        std::fs::write(&path, r#"{"pipelines": {}}"#).unwrap();
        assert!(resolve(Some(&path), &BackendArgs::default(), &PipelineArgs::default()).is_err());
    }
}
