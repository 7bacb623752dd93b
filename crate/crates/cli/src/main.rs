//! `gatedsal`: train, predict, evaluate and inspect the two-stream model.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 degenerate data in an
//! evaluation (report still written), 64 usage error, 70 internal error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gatedsal_core::synth::Region;

pub const EXIT_GRADCHECK_FAILED: u8 = 1;
pub const EXIT_DEGENERATE: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_INTERNAL: u8 = 70;

#[derive(Parser, Debug)]
#[command(name = "gatedsal", version, about = "Gated-fusion two-stream video saliency")]
struct Cli {
    /// Log progress (repeat for debug output). `RUST_LOG` overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on one or more sequences and write a checkpoint and loss log.
    Train(TrainArgs),
    /// Write fused, appearance and temporal maps for every frame.
    Predict(PredictArgs),
    /// Score predicted maps against a sequence's fixations.
    Eval(EvalArgs),
    /// Finite-difference check of the model gradients on random data.
    Gradcheck(GradcheckArgs),
    /// Write gate maps and, optionally, per-region gate means.
    Gates(GatesArgs),
    /// Generate a synthetic sequence with a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Sequence manifest; repeat to train on several sequences.
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
    /// key=value training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Density blur in pixels; overrides manifest and configuration.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write 8-bit PGM previews.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `frame_NNNNN_<kind>.gstn` or `.pgm` maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Which map to score.
    #[arg(long, default_value = "final", value_parser = ["final", "appearance", "temporal"])]
    pub kind: String,
    /// Density blur in pixels; overrides manifest and configuration.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Configuration supplying `sigma` when neither flag nor manifest does.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-frame CSV report; a `key=value` summary goes next to it with
    /// the extension `.summary`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Model configuration (key=value); defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square input size; must be divisible by 16.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Coordinates checked per parameter tensor (all when omitted).
    #[arg(long)]
    pub max_coords: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GatesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rectangles `x,y,w,h` separated by `;`.
    #[arg(long, value_delimiter = ';', value_parser = parse_region)]
    pub regions: Vec<Region>,
    /// Also write 8-bit PGM previews.
    #[arg(long)]
    pub pgm: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `blob`: a bright moving blob. `motion`: a camouflaged mover with
    /// static distractors carrying spurious flow.
    #[arg(long, default_value = "blob", value_parser = ["blob", "motion"])]
    pub kind: String,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sigma recorded in the manifest.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value = "synthetic")]
    pub sequence: String,
}

fn parse_region(s: &str) -> Result<Region, String> {
    Region::parse(s).map_err(|e| e.to_string())
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GATEDSAL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GATEDSAL_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }

    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Gates(a) => commands::gates(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
