use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sno_cli::commands::{self, Options};
use sno_cli::pipeline::Ctx;
use sno_cli::{CliError, EmbeddingChoice, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "sno", version, about = "Score neural operator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Lattice,
    Latent,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbeddingArg {
    Kme,
    Prototype,
    Conditional,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    embedding: Option<EmbeddingArg>,
    /// Ends training after this many epochs in this invocation.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generates and stores every family's samples.
    GenData(Common),
    /// Trains the operator, resuming from the checkpoint when present.
    Train(Common),
    /// Writes generated samples per family.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Per-family MMD on training and held-out families.
    Eval(Common),
    /// MMD against the number of samples used for the embedding.
    Fewshot(Common),
    /// Trains the conditional-table model and compares it after a K = 1 finetune.
    Baseline(Common),
}

fn options(c: &Common) -> Options {
    Options {
        checkpoint: c.checkpoint.clone(),
        embedding: c.embedding.map(|e| match e {
            EmbeddingArg::Kme => EmbeddingChoice::KmePca,
            EmbeddingArg::Prototype => EmbeddingChoice::Prototype,
            EmbeddingArg::Conditional => EmbeddingChoice::Conditional,
        }),
        mode: c.mode.map(|m| match m {
            ModeArg::Lattice => Mode::Lattice,
            ModeArg::Latent => Mode::Latent,
        }),
        stop_after: c.stop_after,
        family: None,
        n: None,
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    commands::init_threads()?;
    let (common, family, n) = match &cli.command {
        Command::GenData(c) | Command::Train(c) | Command::Eval(c) | Command::Fewshot(c) | Command::Baseline(c) => {
            (c, None, None)
        }
        Command::Sample { common, family, n } => (common, family.clone(), *n),
    };
    commands::config_path_exists(&common.config)?;
    let loaded = ExperimentConfig::load(&common.config)?;
    let mut ctx = Ctx::new(&loaded, common.seed);
    let opts = Options {
        family,
        n,
        ..options(common)
    };
    opts.apply(&mut ctx)?;
    match cli.command {
        Command::GenData(_) => commands::gen_data(&ctx),
        Command::Train(_) => commands::train(&ctx, &opts),
        Command::Sample { .. } => commands::sample(&ctx, &opts),
        Command::Eval(_) => commands::eval(&ctx, &opts),
        Command::Fewshot(_) => commands::fewshot_cmd(&ctx, &opts),
        Command::Baseline(_) => commands::baseline(&ctx, &opts),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
