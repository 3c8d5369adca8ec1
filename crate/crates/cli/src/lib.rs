//! Command-line front end: config resolution, run directories and one
//! subcommand per pipeline step.

pub mod commands;
pub mod config;
pub mod rundir;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;
use splitlm::trainer::AblationConfig;
use splitlm::{Error, Result};

use crate::config::{resolve, CliConfig};
use crate::rundir::RunDir;

#[derive(Debug, Parser)]
#[command(name = "splitlm", version, about = "Modality-split language model experiments")]
pub struct Cli {
    /// JSON config; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory; nothing is written elsewhere.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dotted-key override such as `steps.stage1=100`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Recorded in the run metadata; computation is single-threaded.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic language and every corpus.
    GenData,
    /// Train the text-only base model.
    PretrainBase,
    /// Grow a split model from the base checkpoint.
    BuildSplit,
    /// Run the configured pre-training stages on a split model.
    Train,
    /// WER-filter the SFT corpus and fine-tune on it.
    Sft,
    /// Run pre-training ablation configurations side by side.
    Ablate {
        /// Comma-separated subset of fp-full, fp-layerwise, fp-shared, nf, nf-nosplit.
        #[arg(long, value_delimiter = ',')]
        configs: Option<Vec<AblationConfig>>,
    },
    /// Layer-wise text/speech similarity of a split model.
    Analyze,
    /// Ranked-continuation accuracy, perplexity and preservation.
    Eval,
    /// Apply the WER filter to the SFT corpus.
    Filter,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::PretrainBase => "pretrain-base",
            Command::BuildSplit => "build-split",
            Command::Train => "train",
            Command::Sft => "sft",
            Command::Ablate { .. } => "ablate",
            Command::Analyze => "analyze",
            Command::Eval => "eval",
            Command::Filter => "filter",
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::Contract("--out <dir> is required".into()))?;
    let cfg: CliConfig = resolve(cli.config.as_deref(), &cli.sets, cli.seed, cli.threads)?;
    let mut run = RunDir::create(out)?;
    run.write_json("config.json", &cfg)?;
    run.write_json(
        "run.json",
        &json!({
            "subcommand": cli.command.name(),
            "seed": cfg.seed,
            "threads": cfg.threads,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    let start = Instant::now();
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg, &mut run)?,
        Command::PretrainBase => commands::pretrain_base(&cfg, &mut run)?,
        Command::BuildSplit => commands::build_split(&cfg, &mut run)?,
        Command::Train => commands::train(&cfg, &mut run)?,
        Command::Sft => commands::sft(&cfg, &mut run)?,
        Command::Ablate { configs } => {
            let configs = configs.clone().unwrap_or_else(|| AblationConfig::ALL.to_vec());
            commands::ablate(&cfg, &configs, &mut run)?
        }
        Command::Analyze => commands::analyze_cmd(&cfg, &mut run)?,
        Command::Eval => commands::eval(&cfg, &mut run)?,
        Command::Filter => commands::filter(&cfg, &mut run)?,
    }
    let manifest = run.finish()?;
    println!(
        "{} done in {:.1}s; manifest at {}",
        cli.command.name(),
        start.elapsed().as_secs_f64(),
        manifest.display()
    );
    Ok(())
}

/// Exit status of a failure: 2 for filesystem errors, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
