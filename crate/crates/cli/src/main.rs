use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "derain", version, about = "Single-image rain streak and vapor removal")]
struct Cli {
    /// Log debug output.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic rainy dataset with a manifest.
    Synth(SynthArgs),
    /// Train one stage of the protocol, or all of them.
    Train(TrainArgs),
    /// Train and evaluate ablation variants on a test manifest.
    Ablate(AblateArgs),
    /// Restore rainy images with trained networks.
    Derain(DerainArgs),
    /// Score restored images against ground truth by file name.
    Eval(EvalArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Screen-blended streaks over a vapor veil.
    Blend,
    /// Scenes composed with the transmission model, with their maps.
    Scenes,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Anet,
    Snet,
    Joint,
    All,
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    kind: Kind,
    /// Directory of clean PNG backgrounds; procedural backgrounds if absent.
    #[arg(long)]
    clean_dir: Option<PathBuf>,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "all")]
    stage: Stage,
    /// Training manifest (file or dataset directory).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and the training report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory holding checkpoints of earlier stages; defaults to --out.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// c1, c2, c3 or full. Missing earlier-stage checkpoints are then
    /// replaced by fresh networks instead of being an error.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
struct AblateArgs {
    /// c1, c2, c3, full, or all; may be repeated.
    #[arg(long, required = true)]
    mode: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
struct DerainArgs {
    /// Directory with snet.ckpt and optionally vnet.ckpt and anet.ckpt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// A PNG file or a directory of PNG files; with --oracle-maps, a
    /// `scenes` manifest.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also write the maps, atmosphere light and removed layers.
    #[arg(long)]
    dump_maps: bool,
    /// Restore with the true maps of a `scenes` manifest instead of networks.
    #[arg(long)]
    oracle_maps: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// CSV output path; defaults to eval.csv in the prediction directory.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Derain(a) => commands::derain(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
