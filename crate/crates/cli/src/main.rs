//! Command-line front end.
//!
//!   sitlmpc run <config>             run every seed of an experiment
//!   sitlmpc ablate <config>          run optimizer/penalty variants
//!   sitlmpc resume <seed-dir>        finish an interrupted run
//!   sitlmpc validate <config>        check a config, reporting every problem
//!
//! All diagnostics go to stderr; a bad config exits nonzero after listing
//! every problem found, not just the first.

mod config;
mod experiment;
mod metrics;
mod plot;

use clap::{Parser, Subcommand};
use config::{Experiment, ExperimentFile, Variant};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "sitlmpc", version, about = "Safe learning MPC experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment from its demonstration.
    Run {
        /// Experiment TOML file.
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the learned-iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the output root directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run ablation variants with shared seeds and compare them.
    Ablate {
        /// Experiment TOML file.
        config: PathBuf,
        /// Comma-separated variant names (<optimizer>-<penalty>); defaults
        /// to the three MPPI penalty variants.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the learned-iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the output root directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue an interrupted seed from its checkpoint directory.
    Resume {
        /// Seed directory (or its checkpoint/ subdirectory).
        checkpoint: PathBuf,
        /// Override the target iteration count.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Parse and validate an experiment file without running anything.
    Validate {
        /// Experiment TOML file.
        config: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, iterations, out } => {
            load(&config, seed, iterations, out).and_then(|(file, exp, dir)| {
                experiment::run_experiment(&exp, &file, &dir).map(|_| ())
            })
        }
        Command::Ablate { config, variants, seed, iterations, out } => {
            run_ablate(&config, &variants, seed, iterations, out)
        }
        Command::Resume { checkpoint, iterations } => {
            experiment::resume_run(&checkpoint, iterations)
        }
        Command::Validate { config } => validate(&config),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Applies CLI overrides to the experiment file, then builds and validates
/// it. Overrides are applied before validation so the copy written into the
/// output tree reflects what actually ran.
fn load(
    config: &Path,
    seed: Option<u64>,
    iterations: Option<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<(ExperimentFile, Experiment, PathBuf)> {
    let mut file = ExperimentFile::load(config)?;
    if let Some(s) = seed {
        file.experiment.seeds = vec![s];
    }
    if let Some(n) = iterations {
        file.experiment.iterations = n;
    }
    if let Some(o) = out {
        file.experiment.out = o.to_string_lossy().into_owned();
    }
    let config_dir = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    match file.prepare(&config_dir) {
        Ok(exp) => Ok((file, exp, config_dir)),
        Err(problems) => anyhow::bail!(
            "{} is not valid:\n  {}",
            config.display(),
            problems.join("\n  ")
        ),
    }
}

fn run_ablate(
    config: &Path,
    variant_names: &[String],
    seed: Option<u64>,
    iterations: Option<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (file, exp, config_dir) = load(config, seed, iterations, out)?;
    let names: Vec<String> = if variant_names.is_empty() {
        vec!["mppi-adaptive".into(), "mppi-fixed-high".into(), "mppi-fixed-low".into()]
    } else {
        variant_names.to_vec()
    };
    let mut variants = Vec::new();
    let mut problems = Vec::new();
    for name in &names {
        if variants.iter().any(|v: &Variant| v.name == *name) {
            problems.push(format!("variant '{name}' is listed twice"));
            continue;
        }
        match Variant::parse(name, &file.solver) {
            Ok(v) => variants.push(v),
            Err(e) => problems.push(e),
        }
    }
    if !problems.is_empty() {
        anyhow::bail!(
            "bad --variants (choose from {}):\n  {}",
            experiment::variant_names().join(", "),
            problems.join("\n  ")
        );
    }
    experiment::run_ablation(&exp, &file, &config_dir, &variants)?;
    Ok(())
}

fn validate(config: &Path) -> anyhow::Result<()> {
    let file = ExperimentFile::load(config)?;
    let config_dir = config.parent().unwrap_or(Path::new("."));
    match file.prepare(config_dir) {
        Ok(exp) => {
            let env = exp.env.as_dyn();
            println!(
                "{} is valid: experiment '{}', environment '{}', {} seeds x {} iterations",
                config.display(),
                exp.name,
                env.name(),
                exp.seeds.len(),
                exp.iterations
            );
            Ok(())
        }
        Err(problems) => {
            anyhow::bail!("{} is not valid:\n  {}", config.display(), problems.join("\n  "))
        }
    }
}
