//! `graphtone` command-line front end.

mod eval;
mod plot;
mod prepare;
mod render;
mod train;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::util::exit_code;

#[derive(Debug, Parser)]
#[command(name = "graphtone", version, about = "Semantic-graph tone mapping: data prep, training, inference and scoring")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Worker threads for image-parallel work (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory. Nothing is written outside it.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter and resize image triples into a training manifest.
    Prepare(prepare::PrepareArgs),
    /// Build and dump the semantic graph of one image.
    Graph(render::GraphArgs),
    /// Train a model from a manifest.
    Train(train::TrainArgs),
    /// Render an image with a trained model.
    Infer(render::InferArgs),
    /// Blend externally rendered per-segment frames with feathered masks.
    Blend(render::BlendArgs),
    /// Score predictions against references.
    Eval(eval::EvalArgs),
    /// Export per-segment tone curves of a trained model.
    Tonecurve(render::ToneCurveArgs),
    /// Keep the manifest entries whose references have the highest contrast.
    ContrastSelect(eval::ContrastSelectArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let result = match &cli.command {
        Command::Prepare(a) => prepare::run(a, &cli.global),
        Command::Graph(a) => render::graph(a, &cli.global),
        Command::Train(a) => train::run(a, &cli.global),
        Command::Infer(a) => render::infer(a, &cli.global),
        Command::Blend(a) => render::blend(a, &cli.global),
        Command::Eval(a) => eval::run(a, &cli.global),
        Command::Tonecurve(a) => render::tonecurve(a, &cli.global),
        Command::ContrastSelect(a) => eval::contrast_select(a, &cli.global),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
