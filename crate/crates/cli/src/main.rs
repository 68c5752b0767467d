use clap::{Parser, Subcommand};
use pointblank_cli::commands;
use pointblank_cli::config::{ExperimentConfig, Overrides};
use pointblank_cli::error::CliResult;
use std::path::PathBuf;

/// Point-cloud backdoor experiments: corpus generation, poisoning, training,
/// and evaluation, all pinned to one seed.
#[derive(Parser)]
#[command(name = "pointblank", version)]
struct Cli {
    /// experiment config (TOML); defaults are used when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// override the config's global seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// override the config's output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// override the poisoning trigger
    #[arg(long, global = true, value_parser = ["wlt", "ball", "rotation"])]
    trigger: Option<String>,
    /// override the training pipeline, e.g. `sor:30:50,rotate_z:20` (`none` clears it)
    #[arg(long, global = true, value_name = "STEP[,STEP...]")]
    pipeline: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic 5-class corpus and its manifest
    GenSynthetic,
    /// Build and save the poisoned training set
    Poison,
    /// Train the classifier on the poisoned training set
    Train,
    /// Report clean accuracy, attack success rate, and trigger visibility
    Eval {
        /// model checkpoint; defaults to <out_dir>/model.ckpt
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Dump pooled 256-d features with labels and poison flags
    ExportFeatures {
        #[arg(long, default_value = "train", value_parser = ["train", "test"])]
        split: String,
    },
}

fn run(cli: &Cli) -> CliResult<()> {
    let over = Overrides {
        seed: cli.seed,
        out: cli.out.as_ref().map(|p| p.display().to_string()),
        trigger: cli.trigger.clone(),
        pipeline: cli.pipeline.clone(),
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &over)?;
    match &cli.command {
        Cmd::GenSynthetic => commands::cmd_gen_synthetic(&cfg),
        Cmd::Poison => commands::cmd_poison(&cfg),
        Cmd::Train => commands::cmd_train(&cfg),
        Cmd::Eval { checkpoint } => commands::cmd_eval(&cfg, checkpoint.as_deref()),
        Cmd::ExportFeatures { split } => commands::cmd_export_features(&cfg, split),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
