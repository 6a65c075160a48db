//! CascadeFormer command line: synthesize skeleton data, pretrain with
//! masked reconstruction, finetune the cascade for classification, evaluate
//! checkpoints, run one-axis ablations, and inspect checkpoint files.
//!
//! Every data-producing command writes a `.run.json` manifest next to its
//! primary artifact; rerunning with the manifest's config reproduces the
//! artifact byte for byte. Exit status is 0 only when the command completed;
//! runtime failures print a single `error: ...` line on stderr.

mod ablate;
mod eval_cmd;
mod finetune;
mod flags;
mod inspect;
mod manifest;
mod pretrain;
mod synth;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascadeformer", version, about = "Skeleton action recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic skeleton dataset.
    Synth(synth::SynthArgs),
    /// Pretrain a backbone by reconstructing masked joints.
    Pretrain(pretrain::PretrainArgs),
    /// Finetune the classification cascade from a checkpoint or from scratch.
    Finetune(finetune::FinetuneArgs),
    /// Score a checkpoint on a dataset.
    Eval(eval_cmd::EvalArgs),
    /// Ablate one configuration axis over a three-value grid.
    Ablate(ablate::AblateArgs),
    /// Print checkpoint metadata, optionally diffing two checkpoints.
    Inspect(inspect::InspectArgs),
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Pretrain(args) => pretrain::run(args),
        Command::Finetune(args) => finetune::run(args),
        Command::Eval(args) => eval_cmd::run(args),
        Command::Ablate(args) => ablate::run(args),
        Command::Inspect(args) => inspect::run(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        // One line, machine-parsable: nested causes joined with ": ".
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
