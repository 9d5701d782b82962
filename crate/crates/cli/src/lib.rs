//! Command-line front end for the deeptherm pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::Context;

#[derive(Debug, Parser)]
#[command(name = "deeptherm", version, about = "Low-rank thermal analysis pipeline")]
pub struct Cli {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set factorization.rank=6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads for per-case parallelism; 0 uses all cores.
    #[arg(long, short, default_value_t = 0, global = true)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate the phantom cohort.
    Phantom,
    /// Factorize every case with every configured method.
    Factorize,
    /// Embed factorization bases into avatars.
    Embed,
    /// Extract thermomic features from the avatars.
    Features,
    /// Block HSIC lasso feature selection.
    Select,
    /// Forest LOOCV on the selected features.
    Classify,
    /// Noise robustness sweep.
    Sweep,
    /// All stages in order.
    Pipeline,
    /// Print the resolved config and its hash.
    Config,
}

impl Cli {
    /// Resolve the config: file, then `--set`, then `--seed` / `--output`.
    pub fn resolve_config(&self) -> Result<PipelineConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(out) = &self.output {
            overrides.push(format!("output_dir={}", toml::Value::String(out.display().to_string())));
        }
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

/// Run one subcommand; text for stdout on success.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let ctx = Context::new(cli.resolve_config()?)?;
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let out = ctx.config.output_dir.display().to_string();
    Ok(match cli.command {
        Command::Phantom => {
            let cohort = stages::cmd_phantom(&ctx)?;
            format!("wrote {} cases to {out}/{}\n", cohort.cases.len(), stages::COHORT_DIR)
        }
        Command::Factorize => {
            stages::cmd_factorize(&ctx)?;
            format!("wrote {out}/{}\n", stages::FACTOR_DIR)
        }
        Command::Embed => {
            stages::cmd_embed(&ctx)?;
            format!("wrote {out}/{}\n", stages::AVATAR_DIR)
        }
        Command::Features => {
            stages::cmd_features(&ctx)?;
            format!("wrote {out}/{}\n", stages::FEATURE_DIR)
        }
        Command::Select => {
            stages::cmd_select(&ctx)?;
            format!("wrote {out}/{}\n", stages::SELECTION_DIR)
        }
        Command::Classify => {
            stages::cmd_classify(&ctx)?;
            read_eval_table(&ctx)
        }
        Command::Sweep => {
            stages::cmd_sweep(&ctx)?;
            format!("wrote {out}/{}/noise_sweep.csv\n", stages::SWEEP_DIR)
        }
        Command::Pipeline => {
            stages::cmd_pipeline(&ctx)?;
            read_eval_table(&ctx)
        }
        Command::Config => format!("# config_sha256: {}\n{}", ctx.config_hash, ctx.config.to_toml()),
    })
}

fn read_eval_table(ctx: &Context) -> String {
    std::fs::read_to_string(ctx.out(stages::CLASSIFY_DIR).join("eval.txt")).unwrap_or_default()
}
