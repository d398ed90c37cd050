//! `prompter`: synthetic data, training, evaluation, prefix analysis and
//! gradient checks for description-conditioned prefix DST.
//!
//! Exit codes: 0 success, 1 a check failed, 2 invalid input or
//! configuration, 3 numeric failure during training.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prompter_core::tensor::BackwardFault;
use prompter_core::transformer::Mode;
use prompter_core::Error;

use commands::{CheckFailed, EvalSplit};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "prompter", version, about = "Zero-shot dialogue state tracking with slot-conditioned prefixes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config with flat dotted keys, e.g. {"train.max_steps": 100}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set model.d_model=32. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed. Takes precedence over the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Prompter,
    Baseline,
    PromptTuning,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Prompter => Mode::Prompter,
            ModeArg::Baseline => Mode::HardPrompt,
            ModeArg::PromptTuning => Mode::PromptTuning,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    HeldOut,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    ReluLeaks,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain corpus and its schema.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on every domain except the target and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding corpus.jsonl and schema.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        target_domain: String,
        #[arg(long)]
        out: PathBuf,
        /// Print the loss every this many steps (0 disables).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Predict dialogue states and write records and metrics.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target_domain: String,
        #[arg(long, value_enum, default_value = "held-out")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine similarity of aggregated prefixes between slots.
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Comma-separated target slot ids (matrix rows).
        #[arg(long)]
        targets: String,
        /// Comma-separated source slot ids. Defaults to every slot outside
        /// the targets' domains.
        #[arg(long)]
        sources: Option<String>,
        /// CSV path; a .json sibling and a .manifest.json are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check of the full model in f64.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum, hide = true)]
        fault: Option<FaultArg>,
    },
}

fn resolve(base: RunConfig, args: &ConfigArgs, mode: Option<ModeArg>) -> anyhow::Result<RunConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = RunConfig::resolve(base, args.config.as_deref(), &overrides)?;
    if let Some(m) = mode {
        cfg.model.mode = m.into();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { cfg, out } => commands::gen_data(&resolve(RunConfig::default(), &cfg, None)?, &out),
        Command::Train { cfg, data, mode, target_domain, out, log_every } => {
            let mut c = resolve(RunConfig::default(), &cfg, mode)?;
            commands::train_cmd(&mut c, &data, &target_domain, &out, log_every)
        }
        Command::Eval { cfg, checkpoint, data, target_domain, split, out } => {
            let mut c = resolve(RunConfig::default(), &cfg, None)?;
            let split = match split {
                SplitArg::HeldOut => EvalSplit::HeldOut,
                SplitArg::Train => EvalSplit::Train,
            };
            commands::eval_cmd(&mut c, &checkpoint, &data, &target_domain, split, &out)
        }
        Command::Analyze { cfg, checkpoint, schema, targets, sources, out } => {
            let mut c = resolve(RunConfig::default(), &cfg, None)?;
            commands::analyze_cmd(&mut c, &checkpoint, &schema, &targets, sources.as_deref(), &out)
        }
        Command::Gradcheck { cfg, mode, fault } => {
            let c = resolve(commands::gradcheck_base(), &cfg, mode)?;
            let fault = fault.map(|FaultArg::ReluLeaks| BackwardFault::ReluLeaks);
            commands::gradcheck_cmd(&c, fault)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NumericAbort { .. }) => 3,
        Some(Error::Unreliable(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
