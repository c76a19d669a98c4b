use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lro_core::bench::Method;
use lro_core::instruction::OptimizerKind;
use lro_core::metrics::DistanceKind;
use lro_core::pipeline::{CodecKind, ComponentSelection, DenoiserKind, ExtractorKind};

/// Region-based drag editing by latent region optimization.
///
/// Exit codes: 0 success, 1 an acceptance-tagged bench fixture failed, 2 invalid input,
/// 3 runtime failure (including a port that is already bound). Set LRO_LOG to
/// error, warn, info or debug for logs on standard error.
#[derive(Debug, Parser)]
#[command(name = "lro", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Edit one image with an instruction file.
    Run(RunArgs),
    /// Run a method over a fixture suite and write report.csv.
    Bench(BenchArgs),
    /// Compute IF_ed, IF_th and IF_hh over matching image and spec directories.
    Metrics(MetricsArgs),
    /// Start the HTTP run service.
    Serve(ServeArgs),
    /// Write the synthetic fixture suite.
    GenSuite(GenSuiteArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct ComponentArgs {
    /// Noise predictor: zero, linear or smoothing.
    #[arg(long, default_value_t = DenoiserKind::default())]
    pub denoiser: DenoiserKind,
    /// Feature extractor: pyramid or identity.
    #[arg(long, default_value_t = ExtractorKind::default())]
    pub extractor: ExtractorKind,
    /// Image codec: identity or pool.
    #[arg(long, default_value_t = CodecKind::default())]
    pub codec: CodecKind,
}

impl ComponentArgs {
    pub fn selection(&self) -> ComponentSelection {
        ComponentSelection {
            codec: self.codec,
            denoiser: self.denoiser,
            extractor: self.extractor,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input PNG.
    #[arg(long)]
    pub image: PathBuf,
    /// Instruction file (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory for edited.png, loss_trace.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub components: ComponentArgs,
    /// Editing method: pbsi or baseline.
    #[arg(long, default_value_t = Method::Pbsi)]
    pub method: Method,
    /// Recorded in the manifest; every component is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Save the latent after every N-th PBSI timestep under snapshots/ (0 saves none).
    #[arg(long, default_value_t = 0)]
    pub snapshot_every: usize,
    /// Override the optimizer: adam or plain_gradient.
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    /// Override the optimizer step size.
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Override the uneditable-region weight.
    #[arg(long)]
    pub lambda_m: Option<f64>,
    /// Override the iterations per timestep.
    #[arg(long)]
    pub big_k: Option<usize>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown optimizer '{s}' (expected adam or plain_gradient)"))
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suite directory holding fixtures/<name>/{image.png, spec.json, oracle.png}.
    #[arg(long)]
    pub suite: PathBuf,
    /// pbsi, baseline or frozen.
    #[arg(long)]
    pub method: Method,
    /// Output directory for report.csv and fixtures.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub components: ComponentArgs,
    /// Patch distance: mae or ssim.
    #[arg(long, default_value_t = DistanceKind::Mae)]
    pub distance: DistanceKind,
    /// Fixtures run in parallel.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Directory of original PNGs.
    #[arg(long)]
    pub orig: PathBuf,
    /// Directory of edited PNGs with the same file names.
    #[arg(long)]
    pub edited: PathBuf,
    /// Directory of instruction files named <stem>.json.
    #[arg(long)]
    pub specs: PathBuf,
    /// Patch distance: mae or ssim.
    #[arg(long, default_value_t = DistanceKind::Mae)]
    pub distance: DistanceKind,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Runs executing at once.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Accepted runs waiting for a worker.
    #[arg(long, default_value_t = 4)]
    pub queue: usize,
    /// Sessions kept in memory.
    #[arg(long, default_value_t = 32)]
    pub capacity: usize,
    /// Where finished results are written.
    #[arg(long, default_value = "sessions")]
    pub out_dir: PathBuf,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct GenSuiteArgs {
    /// Output suite directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for the shape placement jitter.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
