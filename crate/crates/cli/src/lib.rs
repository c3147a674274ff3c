//! Command-line runner for the fusion detector.
//!
//! Every command resolves one [`RunConfig`], writes `manifest.jsonl` into the
//! output directory before any result, then writes its CSV/JSON results. A
//! manifest alone is enough to rerun the command with `replay`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod suites;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use suites::Scope;

#[derive(Debug, Parser)]
#[command(name = "fusiondet", version, about = "Checks, training and evaluation for the LiDAR/pseudo-point fusion detector")]
pub struct Cli {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for the manifest and result files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted-key override such as `pipeline.network.combine_mode=add`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Command {
    /// Run the invariant and oracle suites; writes checks.csv.
    Check {
        /// Checkpoint to load into a model built from the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences; writes gradcheck.csv.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        scope: Scope,
    },
    /// Train on one or two synthetic scenes; writes train_log.csv, checkpoint.bin,
    /// detections.txt and summary.json.
    Overfit,
    /// Average precision table; writes ap.csv.
    Eval {
        /// Directory of KITTI label files with scores, one per frame.
        #[arg(long, requires = "data", conflicts_with = "checkpoint")]
        detections: Option<PathBuf>,
        /// Dataset directory holding `label_2/` and `calib/`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint evaluated on generated scenes.
        #[arg(long, required_unless_present = "detections")]
        checkpoint: Option<PathBuf>,
    },
    /// Cartesian sweep over ablation switches; writes ablation.csv and one probe run per cell.
    Ablate {
        #[arg(long, value_enum, value_delimiter = ',', default_value = "combine,attention")]
        axes: Vec<Axis>,
        /// Training steps before the outputs are hashed.
        #[arg(long, default_value_t = 0)]
        steps: usize,
    },
    /// Train briefly, then hash the proposal-head outputs on the configured scene; writes probe.csv.
    Probe {
        #[arg(long, default_value_t = 0)]
        steps: usize,
    },
    /// Write synthetic scenes in KITTI layout.
    Generate {
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Write the resolved configuration as config.toml.
    Config,
    /// Rerun the command recorded in a manifest and compare result hashes.
    Replay {
        manifest: PathBuf,
    },
}

/// Ablation switches swept by `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Fusion combine mode: subtract, add, concat.
    Combine,
    /// Attention relation in (PTD, PTU, PFT): `---`, `xxx`, `xx-`, `--x`.
    Attention,
    /// Pseudo-point sampling: kps, fps.
    Sampling,
    /// Enabled transformer modules: none, ptd, ptu, pft, ptd+ptu, ptd+ptu+pft.
    Modules,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Check { .. } => "check",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Overfit => "overfit",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Probe { .. } => "probe",
            Command::Generate { .. } => "generate",
            Command::Config => "config",
            Command::Replay { .. } => "replay",
        }
    }

    /// Replaces relative paths by absolute ones so the manifest does not depend on the working directory.
    fn absolutized(self) -> Result<Self> {
        let abs = |p: Option<PathBuf>| -> Result<Option<PathBuf>> {
            p.map(|p| std::path::absolute(&p).map_err(|e| CliError::io(&p, e))).transpose()
        };
        Ok(match self {
            Command::Check { checkpoint } => Command::Check {
                checkpoint: abs(checkpoint)?,
            },
            Command::Eval {
                detections,
                data,
                checkpoint,
            } => Command::Eval {
                detections: abs(detections)?,
                data: abs(data)?,
                checkpoint: abs(checkpoint)?,
            },
            other => other,
        })
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let out = cli.out.clone();
    if let Command::Replay { manifest } = &cli.command {
        if cli.config.is_some() || cli.seed.is_some() || !cli.overrides.is_empty() {
            return Err(CliError::Config("replay takes its configuration from the manifest".into()));
        }
        return commands::replay(manifest, out.as_deref());
    }
    let config = RunConfig::resolve(cli.config.as_deref(), cli.seed, &cli.overrides)?;
    let command = cli.command.absolutized()?;
    let out = out.unwrap_or_else(|| PathBuf::from("out").join(command.name()));
    execute(&command, &config, &out)
}

/// Runs `command` with a resolved configuration, writing the manifest and results under `out`.
pub fn execute(command: &Command, config: &RunConfig, out: &Path) -> Result<i32> {
    if let Command::Replay { manifest } = command {
        return commands::replay(manifest, Some(out));
    }
    config.validate()?;
    let run = manifest::Run::start(out, command, config)?;
    let code = match commands::dispatch(command, &run) {
        Ok(code) => code,
        Err(e) => {
            run.finish(e.exit_code())?;
            return Err(e);
        }
    };
    run.finish(code)?;
    Ok(code)
}
