//! Operator surface of the lab: `clean`, `synth`, `run`, `report` and
//! `audit-lookahead`.

pub mod audit;
pub mod clean;
pub mod config;
pub mod manifest;
pub mod report;
pub mod run;
pub mod synth;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tsfb_core::panel::CleanConfig;

pub use audit::{cmd_audit, AuditOptions};
pub use clean::cmd_clean;
pub use config::RunConfig;
pub use report::{cmd_report, cumulative_log_returns};
pub use run::{cmd_run, RunOptions, RunOutcome};
pub use synth::{cmd_synth, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "tsfb", version, about = "Foundation-model return forecasting lab")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the plan without touching the filesystem.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Report raw instead of excess kurtosis.
    #[arg(long, global = true)]
    pub raw_kurtosis: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a raw record CSV into a panel cache.
    Clean {
        input: PathBuf,
        out_dir: PathBuf,
        /// Also apply the minimum-price filter.
        #[arg(long)]
        eval_universe: bool,
    },
    /// Generate a synthetic panel CSV.
    Synth { out_dir: PathBuf },
    /// Run the configured experiment.
    Run,
    /// Rebuild the consolidated report of a finished run.
    Report { artifacts_dir: PathBuf },
    /// Check that post-cutoff data cannot reach a vintage.
    AuditLookahead {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 0)]
        vintage: usize,
        #[arg(long)]
        asset: Option<String>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = 0.25)]
        value: f64,
    },
}

/// Exit code for an error: 2 for invalid input or configuration, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use tsfb_core::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Schema { .. } | Error::Config(_) | Error::Plan(_)) => 2,
        _ => 1,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| tsfb_core::Error::Config(format!("{}: {e}", path.display())).into())
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let Some(path) = &cli.config else {
        bail!(tsfb_core::Error::Config("--config is required".into()));
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn init_threads() {
    if let Some(n) = std::env::var("TSFB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Runs a parsed command; `Ok(false)` means it finished but left work
/// incomplete.
pub fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Clean {
            input,
            out_dir,
            eval_universe,
        } => {
            let mut cc: CleanConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => CleanConfig::default(),
            };
            cc.eval_universe |= *eval_universe;
            if cli.dry_run {
                println!("would clean {} into {}", input.display(), out_dir.display());
                return Ok(true);
            }
            cmd_clean(input, out_dir, &cc)?;
            Ok(true)
        }
        Command::Synth { out_dir } => {
            let sc: SynthConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            if cli.dry_run {
                println!("would write a synthetic panel to {}", out_dir.display());
                return Ok(true);
            }
            cmd_synth(&sc, cli.seed.unwrap_or(0), out_dir)?;
            Ok(true)
        }
        Command::Run => {
            let cfg = run_config(cli)?;
            let out = cmd_run(
                &cfg,
                RunOptions {
                    dry_run: cli.dry_run,
                    raw_kurtosis: cli.raw_kurtosis,
                },
            )?;
            Ok(cli.dry_run || out.complete)
        }
        Command::Report { artifacts_dir } => {
            cmd_report(artifacts_dir, cli.raw_kurtosis.then_some(true))?;
            Ok(true)
        }
        Command::AuditLookahead {
            model,
            window,
            vintage,
            asset,
            offset,
            value,
        } => {
            let cfg = run_config(cli)?;
            let lines = cmd_audit(
                &cfg,
                &AuditOptions {
                    model: model.clone(),
                    window: *window,
                    vintage: *vintage,
                    asset: asset.clone(),
                    offset: *offset,
                    value: *value,
                },
            )?;
            Ok(lines.iter().all(|l| l.ok))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_threads();
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
