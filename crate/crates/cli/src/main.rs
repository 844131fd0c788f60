//! `lesplat` command-line driver.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 transport error. Errors
//! go to standard error prefixed with `error[usage]:`, `error[data]:` or
//! `error[transport]:`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lesplat::query::QueryError;
use lesplat::relevancy::{InferenceMode, DEFAULT_THRESHOLD};

#[derive(Debug, Parser)]
#[command(name = "lesplat", version, about = "Language-embedded Gaussian splatting toolkit", args_override_self = true)]
pub struct Cli {
    /// Worker threads for per-pixel loops (default: all cores). Never changes results.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// key = value file supplying default flags for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic scene with cameras and ground-truth label maps.
    Synth(SynthArgs),
    /// Build a codebook from feature grids or embedding-table vectors.
    Quantize(QuantizeArgs),
    /// Fit semantic features, uncertainties and MLPs to label maps.
    Train(TrainArgs),
    /// Render a scene's colors to PPM.
    Render(RenderArgs),
    /// Generate a phrase set for a driving context.
    Query(QueryArgs),
    /// Score a trained scene against a phrase set and threshold it.
    Segment(SegmentArgs),
    /// Compute accuracy, precision, mIoU and mAP from masks and scores.
    Eval(EvalArgs),
    /// Run the synthetic benchmark and compare inference modes.
    Bench(BenchArgs),
}

const SUBCOMMANDS: [&str; 8] = ["synth", "quantize", "train", "render", "query", "segment", "eval", "bench"];

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// SyntheticSceneSpec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 36)]
    height: usize,
    /// Focal length in pixels (default: 1.5 × width).
    #[arg(long)]
    focal: Option<f64>,
    /// Camera distance in front of the class centroid.
    #[arg(long, default_value_t = 5.2)]
    distance: f64,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// LEGF feature grids; every nonzero pixel is one feature. Repeatable.
    #[arg(long = "features")]
    features: Vec<PathBuf>,
    /// Embedding table whose vectors are quantized when no grids are given;
    /// its phrases are carried into the output.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value_t = lesplat::quant::DEFAULT_CODEBOOK_SIZE)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output embedding table with codebook.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Gd,
    Adam,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Camera JSON; pair each with a --gt map in the same order.
    #[arg(long = "camera", required = true)]
    cameras: Vec<PathBuf>,
    /// LEGF label map (depth 1, -1 = unlabeled).
    #[arg(long = "gt", required = true)]
    gts: Vec<PathBuf>,
    /// Number of codewords (default: the size of the --table codebook).
    #[arg(long)]
    codebook_size: Option<usize>,
    /// Embedding table with codebook. With --label-phrase, ground-truth label
    /// c is replaced by the codeword nearest to the c-th phrase's vector.
    #[arg(long, requires = "label_phrases")]
    table: Option<PathBuf>,
    #[arg(long = "label-phrase", requires = "table")]
    label_phrases: Vec<String>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum, default_value = "gd")]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    lambda_s: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_ce: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_u: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_smo: f64,
    #[arg(long, default_value_t = 0.1)]
    w_s: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Object mode: "show the <object>."
    #[arg(long, conflicts_with_all = ["road_type", "context"])]
    object: Option<String>,
    #[arg(long, requires_all = ["weather", "time_of_day"], conflicts_with = "context")]
    road_type: Option<String>,
    #[arg(long)]
    weather: Option<String>,
    #[arg(long)]
    time_of_day: Option<String>,
    /// PromptContext JSON.
    #[arg(long)]
    context: Option<PathBuf>,
    /// Answer from this fixture file; never touches the network.
    #[arg(long, value_name = "FIXTURES")]
    stub: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    retries: Option<u32>,
    #[arg(long)]
    backoff_ms: Option<u64>,
    /// Write the QuerySpec here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the raw exchange (prompts, reply, latency) as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Full,
    WithoutHelping,
    Predefined,
}

impl From<ModeArg> for InferenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => InferenceMode::Full,
            ModeArg::WithoutHelping => InferenceMode::WithoutHelping,
            ModeArg::Predefined => InferenceMode::Predefined,
        }
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Trained scene JSON.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    decoder: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Embedding table that carries the codebook.
    #[arg(long)]
    table: PathBuf,
    /// QuerySpec JSON.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON: {"classes": [{"name", "views": [{"pred", "scores", "gt"}]}]};
    /// relative paths resolve against the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Write metrics JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write the full report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report JSON instead of the table.
    #[arg(long)]
    json: bool,
}

/// Marks an error as a usage problem (exit 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ("usage", 1);
        }
        if let Some(q) = cause.downcast_ref::<QueryError>() {
            if q.is_transport() {
                return ("transport", 3);
            }
        }
    }
    ("data", 2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::expand(std::env::args_os().collect(), &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error[usage]: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("error[usage]: {}", e.render().to_string().trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    // consumed by config::expand before parsing
    debug_assert!(cli.config.is_none());
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error[usage]: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[usage]: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error[{kind}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
