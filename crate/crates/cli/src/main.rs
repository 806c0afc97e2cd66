use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod manifest;

use commands::augment::AugmentArgs;
use commands::eval::EvalArgs;
use commands::gen_gt::GenGtArgs;
use commands::gradcheck::GradcheckArgs;
use commands::render::RenderArgs;
use commands::train::TrainArgs;
use manifest::{execute, provenance_of, replay, Recorded, RunManifest};

/// Crowd-counting ground truth, augmentation and multi-stream networks.
#[derive(Debug, Parser)]
#[command(name = "crowdmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate ground-truth density maps from head annotations.
    GenGt(GenGtArgs),
    /// Cut sliding-window patches and add photometric noise.
    Augment(AugmentArgs),
    /// Train a multi-stream network.
    Train(TrainArgs),
    /// Count-level MAE / RMSE of a checkpoint or of oracle maps.
    Eval(EvalArgs),
    /// Export density maps as grayscale PGM images.
    Render(RenderArgs),
    /// Compare analytic gradients with finite differences on a toy network.
    Gradcheck(GradcheckArgs),
    /// Re-run a command from its manifest and verify identical outputs.
    Replay {
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_recorded<C: Recorded>(args: C, matches: &ArgMatches) -> Result<()> {
    let command = Cli::command();
    let sub = command
        .find_subcommand(C::NAME)
        .expect("recorded commands are subcommands");
    let manifest = execute(args, provenance_of(sub, matches, C::PUBLISHED_DEFAULTS))?;
    log::info!("{} wrote {} outputs", manifest.command, manifest.outputs.len());
    Ok(())
}

fn run_replay(path: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let recorded = RunManifest::read(&path)?;
    let fresh = match recorded.command.as_str() {
        GenGtArgs::NAME => replay::<GenGtArgs>(&recorded, out),
        AugmentArgs::NAME => replay::<AugmentArgs>(&recorded, out),
        TrainArgs::NAME => replay::<TrainArgs>(&recorded, out),
        EvalArgs::NAME => replay::<EvalArgs>(&recorded, out),
        RenderArgs::NAME => replay::<RenderArgs>(&recorded, out),
        GradcheckArgs::NAME => replay::<GradcheckArgs>(&recorded, out),
        other => bail!("unknown command {other:?} in {}", path.display()),
    }?;
    println!("replayed {}: {} outputs identical", fresh.command, fresh.outputs.len());
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CROWDMAP_THREADS") {
        let n: usize = v.parse().with_context(|| format!("CROWDMAP_THREADS={v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run() -> Result<()> {
    init_threads()?;
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match cli.command {
        Command::GenGt(a) => run_recorded(a, sub),
        Command::Augment(a) => run_recorded(a, sub),
        Command::Train(a) => run_recorded(a, sub),
        Command::Eval(a) => run_recorded(a, sub),
        Command::Render(a) => run_recorded(a, sub),
        Command::Gradcheck(a) => run_recorded(a, sub),
        Command::Replay { manifest, out } => run_replay(manifest, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
