use std::path::PathBuf;

use clap::{Parser, Subcommand};

use focovil_cli::commands::{self, EvalArgs, TrainArgs};

/// Multi-view skeleton representation learning pipeline.
#[derive(Parser)]
#[command(name = "focovil", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-view corpus described by the config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Corpus destination (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant; writes checkpoint, epoch log, and
    /// resolved-config snapshot into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Corpus to train on.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Variant override (full, covil, no_plus, no_minus, no_g,
        /// align_reconst, raw_reconst).
        #[arg(long)]
        ablation: Option<String>,
        /// Continue from this checkpoint instead of initializing fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Drop one view from the training corpus (cross-view protocol).
        #[arg(long)]
        exclude_view: Option<u32>,
    },
    /// Evaluate a checkpoint: 1-NN, linear probe, k-means and GMM
    /// clustering on the requested split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// cross-view:ID or scene-disjoint:FRACTION.
        #[arg(long)]
        split: String,
        /// Metrics report destination (JSON).
        #[arg(long)]
        report: PathBuf,
        /// Optional config supplying probe/clustering settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional embedding export destination (CSV).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Run the configured variant × seed grid and write the comparison
    /// table with its monotone-trend verdict.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    let command_line: String = std::env::args().collect::<Vec<_>>().join(" ");
    let result = match cli.command {
        Command::GenData { config, out } => commands::gen_data(&config, &out),
        Command::Train {
            config,
            data,
            out,
            ablation,
            resume,
            exclude_view,
        } => commands::train(
            &TrainArgs {
                config,
                data,
                out,
                ablation,
                resume,
                exclude_view,
            },
            &command_line,
        ),
        Command::Eval {
            checkpoint,
            data,
            split,
            report,
            config,
            embeddings,
        } => commands::eval(&EvalArgs {
            checkpoint,
            data,
            split,
            report,
            config,
            embeddings,
        }),
        Command::Ablate {
            config,
            data,
            out,
            threads,
        } => commands::ablate(&config, &data, &out, threads, &command_line),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
