//! The `wavegnn` command line.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run_gradcheck;
pub use config::{AblationSettings, GradcheckSettings, RunConfig};

use crate::error::{Error, Result};
use crate::model::AblationVariant;

#[derive(Debug, Parser)]
#[command(name = "wavegnn", version, about = "Graph classification of irregularly sampled multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(CommonArgs),
    /// Train a model and report test metrics.
    Train(CommonArgs),
    /// Evaluate a checkpoint.
    Eval(CommonArgs),
    /// Train every ablation variant over several seeds.
    Ablate(CommonArgs),
    /// Leave-sensors-out robustness grid.
    Leaveout(CommonArgs),
    /// Finite-difference gradient check on a tiny random instance.
    Gradcheck(CommonArgs),
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<AblationVariant>,
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonArgs {
    /// File config (or defaults) with flags applied on top.
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(v) = self.variant {
            cfg.model.variant = v;
        }
        if self.data.is_some() {
            cfg.data.clone_from(&self.data);
        }
        if self.out.is_some() {
            cfg.out.clone_from(&self.out);
        }
        cfg.resolve()
    }

    fn threads(&self) -> Result<Option<usize>> {
        if let Some(t) = self.threads {
            return Ok(Some(t));
        }
        match std::env::var("WAVEGNN_THREADS") {
            Ok(s) => s
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::Validation(format!("WAVEGNN_THREADS must be an integer, got `{s}`"))),
            Err(_) => Ok(None),
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Gen(a) => commands::gen(&a.run_config()?),
        Command::Train(a) => commands::train(&a.run_config()?),
        Command::Eval(a) => commands::eval(&a.run_config()?, a.ckpt.as_deref()),
        Command::Ablate(a) => commands::ablate(&a.run_config()?),
        Command::Leaveout(a) => commands::leaveout(&a.run_config()?),
        Command::Gradcheck(a) => commands::gradcheck(&a.run_config()?),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 for usage, configuration and data
/// errors, 2 for numerical failures.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = match &cli.command {
        Command::Gen(a)
        | Command::Train(a)
        | Command::Eval(a)
        | Command::Ablate(a)
        | Command::Leaveout(a)
        | Command::Gradcheck(a) => a.clone(),
    };
    let result = common.threads().and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = threads {
            if t == 0 {
                return Err(Error::Validation("--threads must be positive".into()));
            }
            builder = builder.num_threads(t);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Validation(format!("cannot start thread pool: {e}")))?;
        pool.install(|| dispatch(&cli.command))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
