//! Command-line front end. Every subcommand reads the same TOML run
//! configuration; stage subcommands run a single pipeline stage.
//!
//! Exit codes: 0 success, 1 validation error, 2 missing input, 3 provider
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lscd_core::config::{ProviderConfig, RunConfig};
use lscd_core::pipeline::{Pipeline, Stage};
use lscd_core::{Error, Result, ablation};

#[derive(Parser)]
#[command(
    name = "lscd",
    version,
    about = "Lexical semantic change detection from bags of substitutes"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "lscd.toml")]
    config: PathBuf,

    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index target usages in both corpora.
    Extract,
    /// Draw balanced usage samples per word.
    Sample,
    /// Render masked prompts for every sampled usage and pattern.
    Prompts,
    /// Fetch substitutes from the configured provider.
    Substitutes,
    /// Normalize and combine substitutes across patterns.
    Combine,
    /// Build bag-of-substitutes vectors.
    Vectors,
    /// Graded change scores (APD) and ranks.
    Graded,
    /// Binary change, sense gain and sense loss.
    Binary,
    /// Discriminative substitutes of changed words.
    Discrim,
    /// Score predictions against the gold files.
    Eval,
    /// Run the pattern ablation grid.
    Ablate,
    /// Check the configuration and its input files.
    ValidateConfig,
    /// Run several stages in order.
    Run {
        /// Comma-separated stages; defaults to all (eval only with gold files).
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Extract => Stage::Extract,
            Command::Sample => Stage::Sample,
            Command::Prompts => Stage::Prompts,
            Command::Substitutes => Stage::Substitutes,
            Command::Combine => Stage::Combine,
            Command::Vectors => Stage::Vectors,
            Command::Graded => Stage::Graded,
            Command::Binary => Stage::Binary,
            Command::Discrim => Stage::Discrim,
            Command::Eval => Stage::Eval,
            _ => return None,
        })
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(&cli.config)?;
    if let Some(stage) = cli.command.stage() {
        let outcome = Pipeline::new(config)?.run_stage(stage)?;
        report(&[outcome]);
        return Ok(());
    }
    match &cli.command {
        Command::ValidateConfig => {
            let set = config.pattern_set()?;
            let provider = match &config.provider {
                ProviderConfig::File { .. } => "file",
                ProviderConfig::Http { .. } => "http",
                ProviderConfig::Synthetic { .. } => "synthetic",
            };
            println!(
                "ok: pattern set {} ({} patterns), provider {provider}, top_k {}, seed {}",
                set.name,
                set.patterns.len(),
                config.top_k,
                config.seed
            );
        }
        Command::Ablate => {
            let rows = ablation::run(&config)?;
            let available = rows
                .iter()
                .filter(|r| r.status == ablation::CellStatus::Ok)
                .count();
            println!(
                "ablation: {available}/{} cells scored, written to {}",
                rows.len(),
                config.output_dir.join(ablation::ABLATION).display()
            );
        }
        Command::Run { stages } => {
            let pipeline = Pipeline::new(config)?;
            let stages = if stages.is_empty() {
                pipeline.default_stages()
            } else {
                stages
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<Vec<Stage>>>()?
            };
            report(&pipeline.run(&stages)?);
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn report(outcomes: &[lscd_core::pipeline::StageOutcome]) {
    for o in outcomes {
        if o.cached {
            println!("{:<12} cached", o.stage.name());
        } else {
            println!("{:<12} {:.2}s", o.stage.name(), o.elapsed.as_secs_f64());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code().try_into().unwrap_or(1)
}
