//! The `sma` command: staged training, evaluation and figure emission for
//! synaptic motor adaptation experiments.
//!
//! Configuration is resolved in order: profile defaults, the `--config`
//! TOML file, `SMA_SECTION__KEY` environment overrides, then the `--seed`
//! and `--out` flags. Every file a command writes lives under the run
//! directory.

pub mod commands;
pub mod plot;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sma_core::config::{Profile, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "sma", version, about = "Train and evaluate synaptic motor adaptation policies")]
pub struct Cli {
    /// TOML config merged over the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default profile: desk or paper.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Validate and print the resolved config without running anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a training stage.
    Train {
        #[arg(value_enum)]
        stage: StageArg,
    },
    /// Evaluate every trained policy of the run and write the results table.
    Eval,
    /// Render learning curves, modulator traces and weight histograms.
    Plot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Pretrain,
    Phase1,
    Phase2,
    Plastic,
    Rma,
    Roa,
    /// Every stage in dependency order.
    All,
}

impl StageArg {
    pub fn stages(self) -> Vec<&'static str> {
        match self {
            Self::Pretrain => vec!["pretrain"],
            Self::Phase1 => vec!["phase1"],
            Self::Phase2 => vec!["phase2"],
            Self::Plastic => vec!["plastic"],
            Self::Rma => vec!["rma"],
            Self::Roa => vec!["roa"],
            Self::All => sma_core::pipeline::run_dir::STAGES.to_vec(),
        }
    }
}

/// Resolve the run configuration from flags, file and environment.
pub fn resolve_config<I>(cli: &Cli, env: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let flag_profile = cli.profile.as_deref().map(str::parse::<Profile>).transpose()?;
    let base = flag_profile.unwrap_or(Profile::Desk);
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, base).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::for_profile(base),
    };
    if let Some(p) = flag_profile {
        if p != cfg.profile {
            bail!("--profile {:?} conflicts with profile {:?} in the config file", p, cfg.profile);
        }
    }
    cfg.apply_env_overrides(env)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli, std::env::vars())?;
    if cli.dry_run {
        print!("{}", cfg.to_toml()?);
        eprintln!("dry run: configuration is valid; nothing was run");
        return Ok(());
    }
    match cli.command {
        Command::Train { stage } => commands::train(&cfg, &stage.stages()),
        Command::Eval => commands::eval(&cfg),
        Command::Plot => commands::plot(&cfg.out_dir),
    }
}
