//! `redox`: pack datasets into chunk containers, simulate the
//! redirection-based loader, run ablations and randomness analysis, and
//! verify emitted delivery traces.
//!
//! Exit codes: 0 success, 1 invariant violation, 2 configuration or input
//! error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use redox_core::protocol::RefillPolicy;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "redox", version, about = "Chunked data loading with file redirection")]
struct Cli {
    /// Master seed. Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pack a dataset into one container file per physical chunk.
    Pack(PackArgs),
    /// Simulate epochs and write a metrics report.
    Simulate(SimulateArgs),
    /// Compare the full system against ablated variants.
    Ablate(AblateArgs),
    /// Randomness bound, exhaustive enumeration and uniformity diagnostics.
    Randomness(RandomnessArgs),
    /// Check a delivery or request trace against a layout.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct PackArgs {
    /// Layout text file.
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    layout: Option<PathBuf>,
    /// Simulation config to derive the layout from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synthetic`, or a directory whose files in name order are file ids 0..F.
    #[arg(long)]
    source: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Refill {
    Greedy,
    Random,
    First,
}

impl From<Refill> for RefillPolicy {
    fn from(r: Refill) -> Self {
        match r {
            Refill::Greedy => RefillPolicy::Greedy,
            Refill::Random => RefillPolicy::Random,
            Refill::First => RefillPolicy::First,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation config, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    prefetch: Option<OnOff>,
    #[arg(long)]
    refill: Option<Refill>,
    #[arg(long)]
    batching: Option<OnOff>,
    /// Chunk size K; M is rescaled to keep memory (M·K) fixed.
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Read chunks packed by `pack` from this directory instead of
    /// generating payloads.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write the layout, request traces and delivery logs.
    #[arg(long)]
    emit_trace: bool,
    /// Encode and decode every remote message.
    #[arg(long)]
    wire: bool,
    #[arg(long, default_value = "redox-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also sweep these chunk sizes at fixed memory, e.g. `2,4,8,16`.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RandomnessArgs {
    #[arg(long = "F")]
    files: usize,
    #[arg(long = "M")]
    virtual_chunks: usize,
    #[arg(long = "K")]
    chunk_size: usize,
    /// Count reachable delivery orders of one virtual chunk exhaustively.
    #[arg(long)]
    enumerate: bool,
    /// Run the chi-square diagnostics over this many trials.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "greedy")]
    refill: Refill,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Delivery trace (`redox-deliveries`) or request trace (`redox-trace`).
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    layout: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pack(a) => commands::pack(a, cli.seed),
        Command::Simulate(a) => commands::simulate(a, cli.seed),
        Command::Ablate(a) => commands::ablate(a, cli.seed),
        Command::Randomness(a) => commands::randomness(a, cli.seed),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
