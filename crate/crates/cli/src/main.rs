//! `posecraft`: run pairs and manifests through the pipeline, sweep
//! ablations, sample pairs from a posed catalog and serve the synthetic
//! backend over HTTP.

mod commands;
mod config;
mod server;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{BackendArgs, PipelineArgs};

#[derive(Parser, Debug)]
#[command(name = "posecraft", version, about = "Relative pose from generated intermediate views")]
struct Cli {
    /// TOML or JSON config file.
    #[arg(long, global = true, env = "POSECRAFT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the relative pose of one image pair.
    Run {
        start: PathBuf,
        end: PathBuf,
        /// Directory for result.json and timings.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every generated frame as PNG under `<out>/frames`.
        #[arg(long, requires = "out")]
        dump_frames: bool,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Run a JSON Lines manifest and report angular errors.
    Eval {
        manifest: PathBuf,
        /// Directory for report.json, report.txt, samples.csv, results.jsonl and timings.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Row label of the text table.
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// One report per sweep point over a manifest: `relay`, `k` or `selector`.
    Ablate {
        manifest: PathBuf,
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Draw a pair manifest from a posed catalog by relative yaw.
    SamplePairs {
        catalog: PathBuf,
        #[arg(long)]
        yaw_lo: f64,
        #[arg(long)]
        yaw_hi: f64,
        #[arg(long, default_value_t = 1000)]
        max_pairs: usize,
        #[arg(long, env = "POSECRAFT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "catalog")]
        tag: String,
        /// Output manifest; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a seeded synthetic pair suite with its catalog and manifest.
    SynthSuite {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, env = "POSECRAFT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50.0)]
        yaw_lo: f64,
        #[arg(long, default_value_t = 90.0)]
        yaw_hi: f64,
        /// Gaussian pixel noise, intensity levels.
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        /// 64×40 frames instead of 512×320.
        #[arg(long)]
        small: bool,
    },
    /// Serve the synthetic backend on /v1/{interpolate,nvs,pose,health}.
    ServeMock {
        /// Suite spec to register; a one-pair 64×40 fixture when absent.
        #[arg(long, env = "POSECRAFT_SUITE")]
        suite: Option<PathBuf>,
        #[arg(long, env = "POSECRAFT_JITTER_DEG", default_value_t = 0.0)]
        jitter_deg: f64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let outcome = match cli.command {
        Command::Run { start, end, out, dump_frames, backend, pipeline } => {
            commands::run(cfg, &start, &end, out.as_deref(), dump_frames, &backend, &pipeline)
        }
        Command::Eval { manifest, out, label, backend, pipeline } => {
            commands::eval(cfg, &manifest, out.as_deref(), label.as_deref(), &backend, &pipeline)
        }
        Command::Ablate { manifest, sweep, out, backend, pipeline } => {
            commands::ablate(cfg, &manifest, &sweep, out.as_deref(), &backend, &pipeline)
        }
        Command::SamplePairs { catalog, yaw_lo, yaw_hi, max_pairs, seed, tag, out } => {
            commands::sample_pairs(&catalog, yaw_lo, yaw_hi, max_pairs, seed, &tag, out.as_deref())
        }
        Command::SynthSuite { dir, pairs, seed, yaw_lo, yaw_hi, noise_sigma, small } => {
            commands::synth_suite(&dir, pairs, seed, yaw_lo, yaw_hi, noise_sigma, small)
        }
        Command::ServeMock { suite, jitter_deg, host, port } => commands::serve_mock(suite.as_deref(), jitter_deg, &host, port),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.diagnostic());
            ExitCode::from(f.code())
        }
    }
}
