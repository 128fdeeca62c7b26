mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use audioshield::detection::Scheme;
use audioshield::synth::{SynthConfig, WORDS};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "audioshield", version, about = "Adversarial keyword audio: attack generation and ensemble detection")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set attack.epsilon=0.02`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the keyword classifier and save the model file.
    Train(ConfigArgs),
    /// Attack held-out clips toward every other label; writes WAVs and a manifest.
    AttackGen(ConfigArgs),
    /// Fit detectors on the training split and write per-clip verdicts.
    Detect {
        #[command(flatten)]
        args: ConfigArgs,
        /// Run one scheme instead of every configured scheme.
        #[arg(long)]
        scheme: Option<Scheme>,
    },
    /// Score verdict files; write reports, the heat map and the analysis.
    Evaluate(ConfigArgs),
    /// Frequency-shift t-test and benign accuracy by detector flag.
    Analyze(ConfigArgs),
    /// Write a synthetic keyword dataset in the `<label>/<clip>.wav` layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated words; defaults to the ten built-in keywords.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(CliError::internal)?;
    }
    match cli.command {
        Command::Train(a) => commands::cmd_train(&a.load()?),
        Command::AttackGen(a) => commands::cmd_attack(&a.load()?),
        Command::Detect { args, scheme } => commands::cmd_detect(&args.load()?, scheme),
        Command::Evaluate(a) => commands::cmd_evaluate(&a.load()?),
        Command::Analyze(a) => commands::cmd_analyze(&a.load()?),
        Command::Synth { out, classes, per_class, seed } => {
            let config = SynthConfig {
                classes: classes.unwrap_or_else(|| WORDS.iter().map(|w| w.to_string()).collect()),
                clips_per_class: per_class,
                seed,
                ..SynthConfig::default()
            };
            commands::cmd_synth(&out, &config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
